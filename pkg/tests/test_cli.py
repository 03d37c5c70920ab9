from __future__ import annotations

import json

import pytest

from conftest import DATA, STUB_RESPONSES, reply
from primod.cli import main


@pytest.fixture
def index_file(tmp_path):
    out = tmp_path / "index.json"
    assert main(["index", "--out", str(out)]) == 0
    return out


def _analyze(url, index_file, out, *extra):
    return main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--model", "stub", "--endpoint", url, "--out", str(out), *extra,
    ])


def test_full_cli_flow(stub_server, index_file, tmp_path, capsys):
    a = stub_server(STUB_RESPONSES / "face_auth" / "gpt-oss")
    b = stub_server(STUB_RESPONSES / "face_auth" / "llama")
    assert _analyze(a.url, index_file, tmp_path / "a") == 0
    assert _analyze(b.url, index_file, tmp_path / "b") == 0
    assert main([
        "evaluate", "layer-a", "--candidate", str(tmp_path / "a" / "results.json"), str(tmp_path / "b" / "results.json"),
        "--reference", str(DATA / "profiles" / "face_auth_table.json"), "--reference-model", "PILLAR",
        "--out", str(tmp_path / "la.json"),
    ]) == 0
    assert main([
        "evaluate", "layer-b", "--a", str(tmp_path / "a" / "results.json"), "--b", str(tmp_path / "b" / "results.json"),
        "--tau", "0.2", "--out", str(tmp_path / "lb.json"),
    ]) == 0
    assert main([
        "report", "--layer-a", str(tmp_path / "la.json"), "--layer-b", str(tmp_path / "lb.json"),
        "--format", "markdown", "--out", str(tmp_path / "report.md"), "--figures", str(tmp_path / "figs"),
    ]) == 0
    md = (tmp_path / "report.md").read_text()
    assert "| face_auth | PILLAR | -- | 71.4% | -- |" in md
    assert sorted(p.name for p in (tmp_path / "figs").iterdir()) == [
        "agreement.png", "coverage_0_face_auth.png", "presence_0_face_auth.png",
    ]
    assert main([
        "report", "clusters", "--results", str(tmp_path / "a" / "results.json"), str(tmp_path / "b" / "results.json"),
        "--out", str(tmp_path / "clusters.json"),
    ]) == 0
    doc = json.loads((tmp_path / "clusters.json").read_text())
    assert doc["schema"] == "primod.clusters/v1" and doc["clusters"]


def test_partial_failure_exit_code(stub_server, index_file, tmp_path):
    responses = {f"DF{i}": reply(f"DF{i}") for i in range(8)}
    responses["DF4"] = "garbage"
    server = stub_server(responses)
    assert _analyze(server.url, index_file, tmp_path / "run", "--max-repair-attempts", "0") == 2


def test_missing_endpoint_is_config_error(index_file, tmp_path, monkeypatch):
    monkeypatch.delenv("PRIMOD_LLM_ENDPOINT", raising=False)
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--model", "m", "--out", str(tmp_path / "run"),
    ])
    assert code == 3


def test_endpoint_from_env(stub_server, index_file, tmp_path, monkeypatch):
    server = stub_server(STUB_RESPONSES / "face_auth" / "gpt-oss")
    monkeypatch.setenv("PRIMOD_LLM_ENDPOINT", server.url)
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--model", "m", "--out", str(tmp_path / "run"),
    ])
    assert code == 0


def test_config_file(stub_server, index_file, tmp_path):
    server = stub_server(STUB_RESPONSES / "face_auth" / "gpt-oss")
    (tmp_path / "cfg.json").write_text(json.dumps({"model": {"endpoint_url": server.url, "model_name": "m", "temperature": 0.2}}))
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run"),
    ])
    assert code == 0
    assert server.requests[0]["options"]["temperature"] == 0.2


def test_unknown_config_key(index_file, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"endpoint_url": "http://x", "model_name": "m", "seed": 1}))
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "run"),
    ])
    assert code == 3


def test_invalid_dfd_is_validation_error(index_file, tmp_path):
    (tmp_path / "dfd.json").write_text(json.dumps({"data_flows": [{"id": "DF1", "source": "X"}]}))
    code = main([
        "analyze", "--dfd", str(tmp_path / "dfd.json"), "--index", str(index_file),
        "--model", "m", "--endpoint", "http://127.0.0.1:9/x", "--out", str(tmp_path / "run"),
    ])
    assert code == 1


def test_stale_embedder_is_config_error(index_file, tmp_path):
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / "face_auth.json"), "--index", str(index_file),
        "--model", "m", "--endpoint", "http://127.0.0.1:9/x", "--out", str(tmp_path / "run"), "--dimension", "64",
    ])
    assert code == 3


def test_layer_a_from_profiles(tmp_path):
    prof = str(DATA / "profiles" / "face_auth_table.json")
    assert main(["evaluate", "layer-a", "--candidate", prof, "--reference", prof, "--reference-model", "PILLAR",
                 "--out", str(tmp_path / "la.json")]) == 0
    doc = json.loads((tmp_path / "la.json").read_text())
    assert [c["model"] for c in doc["candidates"]] == ["GPT-OSS", "LLaMA"]


def test_layer_a_ambiguous_reference(tmp_path):
    prof = str(DATA / "profiles" / "face_auth_table.json")
    assert main(["evaluate", "layer-a", "--candidate", prof, "--reference", prof]) == 3


def test_report_needs_input():
    assert main(["report"]) == 3


def test_report_json_to_stdout(tmp_path, capsys):
    prof = str(DATA / "profiles" / "face_auth_table.json")
    main(["evaluate", "layer-a", "--candidate", prof, "--reference", prof, "--reference-model", "PILLAR",
          "--out", str(tmp_path / "la.json")])
    capsys.readouterr()
    assert main(["report", "--layer-a", str(tmp_path / "la.json")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema"] == "primod.report/v1"
    assert len(doc["layer_a"]) == 3
