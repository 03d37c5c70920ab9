from __future__ import annotations

import json
import re
from pathlib import Path

import pytest

from primod.kb import KnowledgeFragment, SourceKb
from primod.stub import StubLLMServer

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "src" / "primod" / "data"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
STUB_RESPONSES = FIXTURES / "stub_responses"


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def face_dfd_path() -> Path:
    return DATA / "dfd" / "face_auth.json"


@pytest.fixture
def auto_dfd_path() -> Path:
    return DATA / "dfd" / "autonomous_driving.json"


@pytest.fixture
def stub_server():
    """Factory for started stub servers; all are stopped at teardown."""
    started: list[StubLLMServer] = []

    def make(responses, delay: float = 0.0) -> StubLLMServer:
        server = StubLLMServer(responses, delay=delay).start()
        started.append(server)
        return server

    yield make
    for s in started:
        s.stop()


def make_fragments(texts: list[str], source: SourceKb = SourceKb.LINDDUN) -> list[KnowledgeFragment]:
    return [
        KnowledgeFragment(f"{source.value}:T{i:02d}#0", source, t, f"T{i:02d}") for i, t in enumerate(texts)
    ]


def reply(df_id: str, threats: list[dict] | None = None) -> str:
    return json.dumps({"df_id": df_id, "identified_threats": threats or []})


def threat(name: str = "Unencrypted Data Transfer", category: str = "Disclosure of information",
           source: str = "LINDDUN", stage: str = "Inference") -> dict:
    return {
        "name": name,
        "justification": "Data leaves the device without transport protection.",
        "linddun_category": category,
        "ai_lifecycle_stage": stage,
        "source": source,
    }


# acceptance verdicts: criterion number -> [(part, ok, detail)]
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}
N_CRITERIA = 11
_ACCEPTANCE_TEST = re.compile(r"test_acceptance\.py::test_c(\d+)_")
_FAILED_VERDICT: set[str] = set()


@pytest.fixture
def verdict(request):
    def record(criterion: int, part: str, ok: bool, detail: str = "") -> None:
        ACCEPTANCE.setdefault(criterion, []).append((part, bool(ok), detail))
        if not ok:
            _FAILED_VERDICT.add(request.node.nodeid)
        print(f"criterion {criterion} [{part}]: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, f"criterion {criterion} [{part}]: {detail}"

    return record


def pytest_runtest_logreport(report):
    # a test that errors before recording still counts against its criterion
    m = _ACCEPTANCE_TEST.search(report.nodeid)
    if m and report.failed and report.nodeid not in _FAILED_VERDICT:
        ACCEPTANCE.setdefault(int(m.group(1)), []).append((report.nodeid.split("::")[-1], False, "errored"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n:2d}: FAIL (not run)")
            continue
        ok = all(p[1] for p in parts)
        failed = "; ".join(f"{p[0]}: {p[2]}" for p in parts if not p[1])
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} ({len(parts)} checks)"
        terminalreporter.write_line(line + (f" {failed}" if failed else ""))
