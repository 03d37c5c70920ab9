"""Acceptance checks. Each test records a verdict; a per-criterion summary is
printed at the end of the session (see ``pytest_terminal_summary`` in conftest)."""

from __future__ import annotations

import json
import random
import re
import signal
import subprocess
import sys
import time
from itertools import permutations

import jsonschema
import numpy as np
import pytest

from conftest import DATA, FIXTURES, STUB_RESPONSES, reply, threat
from golden_context import golden_context
from oracles import exact_rank_key, hashed_counts, kappa_2x2, union_find_partition
from primod.cli import main
from primod.clustering import ClusterConfig, cluster, normalize_name, token_jaccard
from primod.dfd import parse_dfd
from primod.errors import EmptyAfterNormalization, ExhaustedRepairs
from primod.kb import KnowledgeFragment, LinddunCategory, SourceKb
from primod.llm_client import RESULT_SCHEMA, ModelConfig, analyze_flow, parse_result
from primod.metrics import (
    PresenceMatrix,
    agreement_report,
    avg_coverage,
    cohens_kappa,
    load_profiles,
    pabak,
    robustness,
)
from primod.pipeline import RESULTS_SCHEMA
from primod.prompt import AugmentedPrompt, assemble, instantiate, load_template
from primod.retrieval import HashingEmbedder, build_index, top_k
from primod.text import default_stopwords

PP = 100.0


@pytest.fixture(scope="module")
def index_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc-index") / "index.json"
    assert main(["index", "--out", str(out)]) == 0
    return out


# 1 ------------------------------------------------------------------------- #
def test_c01_face_auth_coverage_exact(verdict):
    _, prof = load_profiles(DATA / "profiles" / "face_auth_table.json")
    pillar = avg_coverage(prof["PILLAR"]) * PP
    verdict(1, "PILLAR", abs(pillar - 40 / 56 * PP) <= 0.05, f"{pillar:.4f} vs {40 / 56 * PP:.4f}")
    got = sorted(avg_coverage(prof[m]) * PP for m in ("GPT-OSS", "LLaMA"))
    want = [73.21, 82.14]
    ok = all(abs(g - w) <= 0.05 for g, w in zip(got, want))
    verdict(1, "tool pair", ok, f"{[round(g, 4) for g in got]} vs {want}")


# 2 ------------------------------------------------------------------------- #
AUTONOMOUS_REPORTED = {"PILLAR": 82.6, "GPT-OSS": 81.1, "LLaMA": 71.3}


@pytest.mark.parametrize("model", list(AUTONOMOUS_REPORTED))
def test_c02_autonomous_coverage_tolerant(verdict, model):
    _, prof = load_profiles(DATA / "profiles" / "autonomous_driving_table.json")
    got = avg_coverage(prof[model]) * PP
    want = AUTONOMOUS_REPORTED[model]
    verdict(2, model, abs(got - want) <= 2.0, f"{got:.2f} vs {want} (diff {abs(got - want):.2f} pp, tol 2.0)")


def test_c02_no_relabeling_rescues_the_cells():
    # Diagnostic, not a verdict: even the best assignment of the three profiles
    # to the three reported cells leaves one cell outside the tolerance.
    _, prof = load_profiles(DATA / "profiles" / "autonomous_driving_table.json")
    got = [avg_coverage(p) * PP for p in prof.values()]
    best = min(
        max(abs(g - w) for g, w in zip(perm, AUTONOMOUS_REPORTED.values())) for perm in permutations(got)
    )
    assert best > 2.0


# 3 ------------------------------------------------------------------------- #
def test_c03_pabak_value(verdict):
    got = pabak(0.715)
    verdict(3, "pabak(0.715)", abs(got - 0.43) <= 1e-12, f"{got!r}")


def test_c03_pabak_identity(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 200))
        m = PresenceMatrix.from_columns(rng.random(n) < rng.random(), rng.random(n) < rng.random())
        r = agreement_report(m)
        worst = max(worst, abs(r.pabak - (2 * r.p_o - 1)))
    verdict(3, "identity", worst <= 1e-12, f"max deviation {worst:.1e} over 500 matrices")


# 4 ------------------------------------------------------------------------- #
@pytest.mark.parametrize(
    "args, expected", [((0.7455, 0.7818, 0.5782), 0.7018), ((0.69, 0.715, 0.43), 0.6117)]
)
def test_c04_robustness(verdict, args, expected):
    got = robustness(*args)
    verdict(4, f"R{args}", abs(got - expected) <= 0.0005, f"{got:.5f} vs {expected}")


# 5 ------------------------------------------------------------------------- #
def test_c05_kappa_oracle(verdict):
    rng = random.Random(1000)
    worst = 0.0
    for i in range(1000):
        n = rng.randint(4, 200)
        # every tenth matrix uses degenerate prevalence to hit the P_e = 1 corner
        pa, pb = (rng.choice([0.0, 1.0]), rng.choice([0.0, 1.0])) if i % 10 == 0 else (rng.random(), rng.random())
        a = [rng.random() < pa for _ in range(n)]
        b = [rng.random() < pb for _ in range(n)]
        got = cohens_kappa(PresenceMatrix.from_columns(a, b))
        want = kappa_2x2(a, b)
        worst = max(worst, max(abs(x - y) for x, y in zip(got, want)))
    verdict(5, "1000 matrices", worst <= 1e-12, f"max deviation {worst:.1e}")


# 6 ------------------------------------------------------------------------- #
CLUSTER_VOCAB = [
    "data", "leakage", "leak", "membership", "inference", "attack", "attacks", "model", "inversion",
    "location", "tracking", "re-identification", "user", "profiling", "unencrypted", "transfer",
    "biometric", "template", "exposure", "linkability", "sessions", "logging", "the", "of",
]
TAUS = (0.0, 0.2, 0.5, 0.9)


def test_c06_clustering_oracle(verdict):
    rng = random.Random(200)
    mismatches, non_monotone = [], []
    for case in range(200):
        names = sorted({
            " ".join(rng.choices(CLUSTER_VOCAB, k=rng.randint(1, 4))) for _ in range(rng.randint(1, 25))
        })
        token_sets, kept = [], []
        for n in names:
            try:
                token_sets.append(normalize_name(n).tokens)
                kept.append(n)
            except EmptyAfterNormalization:
                pass  # stopword-only names are quarantined and never merged
        parts = []
        for tau in TAUS:
            want = {frozenset(kept[i] for i in g) for g in union_find_partition(token_sets, tau)}
            got = {
                frozenset(c.names)
                for c in cluster([(n, "A", "DF1") for n in kept], ClusterConfig(tau=tau))
            }
            if got != want:
                mismatches.append((case, tau))
            parts.append(got)
        for finer, coarser in zip(parts[1:], parts):
            if not all(any(f <= c for c in coarser) for f in finer):
                non_monotone.append(case)
    verdict(6, "union-find", not mismatches, f"{len(mismatches)} mismatches in 800 partitions")
    verdict(6, "monotone", not non_monotone, f"{len(non_monotone)} non-monotone cases")


# 7 ------------------------------------------------------------------------- #
def test_c07_misinformation_pair(verdict):
    a, b = "AI-Generated Misinformation Using Location Data", "AI-Fabricated Location Misinformation"
    ta, tb = normalize_name(a).tokens, normalize_name(b).tokens
    j = token_jaccard(ta, tb)
    verdict(7, "jaccard", j == 0.5, f"{sorted(ta)} vs {sorted(tb)} -> {j}")
    clusters = cluster([(a, "A", "DF3"), (b, "B", "DF3")], ClusterConfig(tau=0.20))
    verdict(7, "one cluster", len(clusters) == 1, f"{len(clusters)} clusters")


# 8 ------------------------------------------------------------------------- #
_WORDS = re.compile(r"[^\w]+|_+")


def _oracle_tokens(text: str) -> list[str]:
    stop = default_stopwords()
    return [t for t in _WORDS.sub(" ", text.lower()).split() if t not in stop]


def test_c08_retrieval_exact(verdict):
    fixture = json.loads((FIXTURES / "retrieval_40.json").read_text())
    fragments = [KnowledgeFragment.from_dict(f) for f in fixture["fragments"]]
    assert len(fragments) == 40
    embedder = HashingEmbedder()
    index = build_index(fragments, embedder)
    doc_counts = {f.fragment_id: hashed_counts(_oracle_tokens(f.text), embedder.dimension) for f in fragments}

    rng = random.Random(100)
    vocab = fixture["vocabulary"]
    bad = []
    for q in range(100):
        if q % 10 == 0:
            text = "unrelated words only"  # no overlap: every similarity is zero
        else:
            text = " ".join(rng.choices(vocab, k=rng.randint(1, 5)))
        qc = hashed_counts(_oracle_tokens(text), embedder.dimension)
        oracle = sorted(fragments, key=lambda f: (-exact_rank_key(doc_counts[f.fragment_id], qc), f.fragment_id))
        want = [f.fragment_id for f in oracle[:7]]
        got = [s.fragment.fragment_id for s in top_k(index, embedder.embed(text), 7)]
        if got != want:
            bad.append(text)
    verdict(8, "100 queries", not bad, f"{len(bad)} mismatching queries {bad[:3]}")


# 9 ------------------------------------------------------------------------- #
@pytest.mark.parametrize("system, n", [("face_auth", 8), ("autonomous_driving", 14)])
def test_c09_end_to_end(verdict, stub_server, tmp_path, system, n):
    index = tmp_path / "index.json"
    assert main(["index", "--out", str(index)]) == 0
    server = stub_server(STUB_RESPONSES / system / "gpt-oss")
    code = main([
        "analyze", "--dfd", str(DATA / "dfd" / f"{system}.json"), "--index", str(index),
        "--model", "stub", "--endpoint", server.url, "--out", str(tmp_path / "run"),
    ])
    doc = json.loads((tmp_path / "run" / "results.json").read_text())
    errors = []
    for r in doc["results"]:
        try:
            jsonschema.validate({"df_id": r["df_id"], "identified_threats": r["identified_threats"]}, RESULT_SCHEMA)
        except jsonschema.ValidationError as exc:
            errors.append(f"{r['df_id']}: {exc.message}")
    ok = code == 0 and doc["schema"] == RESULTS_SCHEMA and len(doc["results"]) == n and not errors
    verdict(9, f"{system} e2e", ok, f"exit {code}, {len(doc['results'])} results, {len(errors)} schema errors")


def test_c09_preamble_repaired(verdict, stub_server):
    server = stub_server({"DF5": "Sure, here you go:\n" + reply("DF5", [threat()]) + "\nHope this helps."})
    result = analyze_flow(AugmentedPrompt("DF5", "Analyze this flow.\n- ID: DF5\n"), ModelConfig(endpoint_url=server.url, model_name="m"))
    ok = server.calls["DF5"] == 1 and len(result.identified_threats) == 1
    verdict(9, "preamble", ok, f"{server.calls['DF5']} calls")


@pytest.mark.parametrize("repairs", [0, 1, 3])
def test_c09_garbage_exhausts(verdict, stub_server, repairs):
    server = stub_server({"DF5": "no structured answer"})
    cfg = ModelConfig(endpoint_url=server.url, model_name="m", max_repair_attempts=repairs)
    with pytest.raises(ExhaustedRepairs):
        analyze_flow(AugmentedPrompt("DF5", "Analyze this flow.\n- ID: DF5\n"), cfg)
    verdict(9, f"garbage r={repairs}", server.calls["DF5"] == 1 + repairs, f"{server.calls['DF5']} calls")


def test_c09_kill_restart(verdict, stub_server, index_file, tmp_path):
    out = tmp_path / "run"
    dfd = str(DATA / "dfd" / "autonomous_driving.json")
    slow = stub_server(STUB_RESPONSES / "autonomous_driving" / "llama", delay=0.25)
    proc = subprocess.Popen(
        [sys.executable, "-m", "primod.cli", "analyze", "--dfd", dfd, "--index", str(index_file),
         "--model", "stub", "--endpoint", slow.url, "--concurrency", "2", "--out", str(out)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    deadline = time.monotonic() + 30
    while time.monotonic() < deadline and len(list(out.glob("flows/*.json"))) < 4:
        time.sleep(0.05)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    completed = {p.stem for p in out.glob("flows/*.json")}
    assert 0 < len(completed) < 14

    fast = stub_server(STUB_RESPONSES / "autonomous_driving" / "llama")
    code = main(["analyze", "--dfd", dfd, "--index", str(index_file), "--model", "stub",
                 "--endpoint", fast.url, "--out", str(out)])
    resent = set(fast.calls) & completed
    n = len(json.loads((out / "results.json").read_text())["results"])
    ok = code == 0 and not resent and n == 14
    verdict(9, "kill/restart", ok, f"{len(completed)} done before kill, re-sent {sorted(resent)}, {n} results")


# 10 ------------------------------------------------------------------------ #
def test_c10_df5_round_trip(verdict):
    raw = (FIXTURES / "df5_structured_output.json").read_text()
    result = parse_result(raw, "DF5")
    cats = [t.linddun_category for t in result.identified_threats]
    sources = [t.source for t in result.identified_threats]
    ok = cats == [LinddunCategory.DISCLOSURE_OF_INFORMATION] * 2 and sources == [SourceKb.LINDDUN, SourceKb.AI_PRIVACY_KB]
    verdict(10, "records", ok, f"{[c.value for c in cats]} {[s.value for s in sources]}")

    original, payload = json.loads(raw), result.to_payload()
    same = parse_result(json.dumps(payload), "DF5") == result and payload["df_id"] == original["df_id"]
    for a, b in zip(original["identified_threats"], payload["identified_threats"]):
        same &= set(a) == set(b)
        same &= all(a[k] == b[k] for k in a if k != "linddun_category")
        same &= LinddunCategory.parse(a["linddun_category"]) is LinddunCategory.parse(b["linddun_category"])
    verdict(10, "re-serialize", same, "payload equivalent to the input document")


# 11 ------------------------------------------------------------------------ #
def test_c11_golden_prompt(verdict):
    flow = parse_dfd(DATA / "dfd" / "autonomous_driving.json").flow("DF1")
    text = assemble(instantiate(load_template(), flow), golden_context()).text
    golden = (FIXTURES / "golden_df1_prompt.txt").read_bytes()
    verdict(11, "DF1", text.encode("utf-8") == golden, f"{len(text.encode())} vs {len(golden)} bytes")
