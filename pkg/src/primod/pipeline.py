"""End-to-end orchestration: index building and resumable per-flow analysis."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .dfd import DfdModel, parse_dfd
from .errors import FingerprintMismatch, MalformedFile, PrimodError
from .kb import DEFAULT_MAX_CHUNK_CHARS, chunk_kb, load_ai_privacy_kb, load_linddun_kb
from .llm_client import AnalysisResult, GenerateFn, ModelConfig, analyze_flow
from .prompt import DEFAULT_MAX_PROMPT_CHARS, PromptTemplate, assemble, instantiate, load_template
from .retrieval import DEFAULT_K, Embedder, VectorIndex, build_index, fragments_fingerprint, top_k

log = logging.getLogger(__name__)

RESULTS_SCHEMA = "primod.results/v1"
MANIFEST_SCHEMA = "primod.manifest/v1"

PENDING, DONE, FAILED = "pending", "done", "failed"


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------- #
# indexing
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class IndexSummary:
    path: Path
    fragment_count: int
    embedder_fingerprint: str
    kb_fingerprint: str
    index_fingerprint: str


def run_index(
    linddun_kb_path: str | Path,
    ai_kb_path: str | Path,
    out: str | Path,
    embedder: Embedder,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    max_workers: int = 1,
) -> IndexSummary:
    linddun = load_linddun_kb(linddun_kb_path)
    ai = load_ai_privacy_kb(ai_kb_path)
    fragments = chunk_kb(linddun, ai, max_chunk_chars)
    index = build_index(fragments, embedder, max_workers=max_workers)
    out = Path(out)
    index.save(out)
    log.info("indexed %d fragments (%s)", len(index), index.embedder_fingerprint)
    return IndexSummary(out, len(index), index.embedder_fingerprint, index.kb_fingerprint, index.fingerprint)


# --------------------------------------------------------------------------- #
# manifest
# --------------------------------------------------------------------------- #
@dataclass
class RunManifest:
    run_id: str
    created_at: str
    config: dict[str, Any]
    fingerprints: dict[str, str]
    flows: dict[str, dict[str, Any]] = field(default_factory=dict)
    updated_at: str = ""

    def status(self, df_id: str) -> str:
        return self.flows[df_id]["status"]

    def set_status(self, df_id: str, status: str, **info: Any) -> None:
        current = self.flows[df_id]["status"]
        if current != PENDING or status not in (DONE, FAILED):
            raise ValueError(f"{df_id}: illegal status transition {current} -> {status}")
        self.flows[df_id] = {"status": status, **info}

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": MANIFEST_SCHEMA,
            "run_id": self.run_id,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
            "config": self.config,
            "fingerprints": self.fingerprints,
            "flows": self.flows,
        }

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedFile(f"{path}: corrupt manifest ({exc})") from None
        if data.get("schema") != MANIFEST_SCHEMA:
            raise MalformedFile(f"{path}: not a {MANIFEST_SCHEMA} file")
        return cls(
            run_id=data["run_id"],
            created_at=data["created_at"],
            config=data["config"],
            fingerprints=data["fingerprints"],
            flows=data.get("flows", {}),
            updated_at=data.get("updated_at", ""),
        )


class _ManifestWriter:
    """Single writer for the manifest; every update is persisted atomically."""

    def __init__(self, manifest: RunManifest, path: Path):
        self.manifest = manifest
        self.path = path
        self._lock = threading.Lock()

    def save(self) -> None:
        with self._lock:
            self._save()

    def _save(self) -> None:
        self.manifest.updated_at = _now()
        atomic_write_text(self.path, json.dumps(self.manifest.to_dict(), indent=2, ensure_ascii=False) + "\n")

    def update(self, df_id: str, status: str, **info: Any) -> None:
        with self._lock:
            self.manifest.set_status(df_id, status, **info)
            self._save()


# --------------------------------------------------------------------------- #
# analysis
# --------------------------------------------------------------------------- #
@dataclass
class RunConfig:
    dfd_path: Path
    index_path: Path
    output_dir: Path
    model: ModelConfig
    template_path: Path | None = None
    k: int = DEFAULT_K
    concurrency: int = 2
    max_prompt_chars: int | None = DEFAULT_MAX_PROMPT_CHARS
    linddun_kb_path: Path | None = None
    ai_kb_path: Path | None = None
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def snapshot(self) -> dict[str, Any]:
        return {
            "dfd_path": str(self.dfd_path),
            "index_path": str(self.index_path),
            "template_path": str(self.template_path) if self.template_path else None,
            "k": self.k,
            "concurrency": self.concurrency,
            "max_prompt_chars": self.max_prompt_chars,
            "model": self.model.to_dict(),
        }


@dataclass
class RunOutcome:
    results_path: Path
    manifest: RunManifest
    results: list[AnalysisResult]
    failed: list[str]
    skipped: list[str]

    @property
    def ok(self) -> bool:
        return not self.failed


def sidecar_path(output_dir: Path, df_id: str) -> Path:
    return output_dir / "flows" / (re.sub(r"[^A-Za-z0-9._-]", "_", df_id) + ".json")


def _read_sidecar(path: Path, df_id: str) -> AnalysisResult | None:
    try:
        result = AnalysisResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, ValueError, PrimodError) as exc:
        log.warning("ignoring unreadable sidecar %s: %s", path, exc)
        return None
    return result if result.df_id == df_id else None


def _check_kb_drift(config: RunConfig, index: VectorIndex) -> None:
    if config.linddun_kb_path is None or config.ai_kb_path is None:
        return
    fragments = chunk_kb(
        load_linddun_kb(config.linddun_kb_path), load_ai_privacy_kb(config.ai_kb_path), config.max_chunk_chars
    )
    if fragments_fingerprint(fragments) != index.kb_fingerprint:
        raise FingerprintMismatch("index is stale: knowledge bases changed since it was built; rerun `primod index`")


def run_analysis(
    config: RunConfig,
    embedder: Embedder,
    generate_fn: GenerateFn | None = None,
) -> RunOutcome:
    """Analyze every data flow of the DFD; resume past flows already done."""
    dfd: DfdModel = parse_dfd(config.dfd_path)
    template: PromptTemplate = load_template(config.template_path)
    index = VectorIndex.load(config.index_path, expected_fingerprint=embedder.fingerprint)
    _check_kb_drift(config, index)

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fingerprints = {
        "kb": index.kb_fingerprint,
        "index": index.fingerprint,
        "embedder": index.embedder_fingerprint,
        "dfd": _sha(json.dumps(dfd.to_dict(), sort_keys=True)),
        "template": _sha(template.raw_text),
        "model": config.model.model_name,
    }
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        previous = RunManifest.load(manifest_path)
        drift = sorted(k for k, v in fingerprints.items() if previous.fingerprints.get(k) != v)
        if drift:
            raise FingerprintMismatch(
                f"{out} holds run {previous.run_id} made with different {', '.join(drift)}; "
                "use a fresh output directory"
            )
        run_id, created_at = previous.run_id, previous.created_at
    else:
        run_id, created_at = uuid.uuid4().hex[:12], _now()

    manifest = RunManifest(run_id, created_at, config.snapshot(), fingerprints)
    done: dict[str, AnalysisResult] = {}
    for flow in dfd.data_flows:
        prior = _read_sidecar(sidecar_path(out, flow.id), flow.id) if sidecar_path(out, flow.id).exists() else None
        if prior is not None:
            done[flow.id] = prior
            manifest.flows[flow.id] = {"status": DONE, "raw_attempts": prior.raw_attempts, "resumed": True}
        else:
            manifest.flows[flow.id] = {"status": PENDING}
    writer = _ManifestWriter(manifest, manifest_path)
    writer.save()
    skipped = list(done)
    if skipped:
        log.info("resuming run %s: %d flow(s) already done", run_id, len(skipped))

    def job(flow) -> None:
        try:
            query = embedder.embed(flow.description)
            hits = top_k(index, query, config.k)
            prompt = assemble(instantiate(template, flow), hits, config.max_prompt_chars)
            result = analyze_flow(prompt, config.model, generate_fn, run_id=run_id)
            atomic_write_text(
                sidecar_path(out, flow.id), json.dumps(result.to_dict(), indent=2, ensure_ascii=False) + "\n"
            )
            done[flow.id] = result
            writer.update(flow.id, DONE, raw_attempts=result.raw_attempts,
                          fragments=list(prompt.used_fragment_ids))
            log.info("%s: %d threat(s)", flow.id, len(result.identified_threats))
        except PrimodError as exc:
            log.error("%s failed: %s", flow.id, exc)
            writer.update(flow.id, FAILED, error=f"{type(exc).__name__}: {exc}")

    pending = [f for f in dfd.data_flows if f.id not in done]
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        list(pool.map(job, pending))

    results = [done[f.id] for f in dfd.data_flows if f.id in done]
    failed = [f.id for f in dfd.data_flows if manifest.flows[f.id]["status"] == FAILED]
    document = {
        "schema": RESULTS_SCHEMA,
        "run_id": run_id,
        "system": dfd.metadata.get("system", Path(config.dfd_path).stem),
        "model": config.model.model_name,
        "config": config.snapshot(),
        "started_at": created_at,
        "finished_at": _now(),
        "fingerprints": fingerprints,
        "flows": dfd.flow_ids,
        "failed": failed,
        "results": [r.to_dict() for r in results],
    }
    results_path = out / "results.json"
    atomic_write_text(results_path, json.dumps(document, indent=2, ensure_ascii=False) + "\n")
    return RunOutcome(results_path, manifest, results, failed, skipped)


# --------------------------------------------------------------------------- #
# results files
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class ResultsFile:
    model: str
    system: str
    flows: tuple[str, ...]
    results: tuple[AnalysisResult, ...]


def load_results(path: str | Path) -> ResultsFile:
    """Read a results document, or a bare list of AnalysisResult objects."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedFile(f"{path}: not found") from None
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None
    if isinstance(data, list):
        data = {"results": data}
    if not isinstance(data, dict) or not isinstance(data.get("results"), list):
        raise MalformedFile(f"{path}: expected a results document with a 'results' list")
    if "schema" in data and data["schema"] != RESULTS_SCHEMA:
        raise MalformedFile(f"{path}: unsupported schema {data['schema']!r}")
    results = tuple(AnalysisResult.from_dict(r) for r in data["results"])
    flows = tuple(data.get("flows") or [r.df_id for r in results])
    model = data.get("model") or next((r.model_name for r in results if r.model_name), path.stem)
    return ResultsFile(model=model, system=str(data.get("system", "")), flows=flows, results=results)
