"""Command-line entry point: ``primod index|analyze|evaluate|report|stub-server``.

Exit codes: 0 success, 1 validation error, 2 partial failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import ConfigError, PrimodError
from .kb import SourceKb
from .llm_client import ModelConfig
from .metrics import clusters_document, layer_a, layer_b, load_profiles
from .pipeline import RunConfig, atomic_write_text, load_results, run_analysis, run_index
from .report import load_layer_a, load_layer_b, render, summarize, write_figures
from .retrieval import make_embedder

EXIT_OK, EXIT_VALIDATION, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("primod")


def _data(name: str) -> Path:
    return Path(str(resources.files("primod") / "data" / name))


def _write_json(path: str | None, doc: Any) -> None:
    text = json.dumps(doc, indent=2, ensure_ascii=False) + "\n"
    if path:
        atomic_write_text(Path(path), text)
    else:
        sys.stdout.write(text)


def _embedder(args: argparse.Namespace):
    return make_embedder(
        args.embedder,
        dimension=args.dimension,
        endpoint=args.embed_endpoint or os.environ.get("PRIMOD_EMBED_ENDPOINT"),
        model=args.embed_model,
        field_path=args.embed_field,
    )


# --------------------------------------------------------------------------- #
# commands
# --------------------------------------------------------------------------- #
def cmd_index(args: argparse.Namespace) -> int:
    summary = run_index(
        args.linddun_kb, args.ai_kb, args.out, _embedder(args), args.max_chunk_chars, args.workers
    )
    print(f"{summary.path}: {summary.fragment_count} fragments, index {summary.index_fingerprint[:12]}")
    return EXIT_OK


def _model_config(args: argparse.Namespace) -> ModelConfig:
    settings: dict[str, Any] = {}
    if args.config:
        try:
            settings = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(settings, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        settings = dict(settings.get("model", settings))
    overrides = {
        "endpoint_url": args.endpoint,
        "model_name": args.model,
        "temperature": args.temperature,
        "top_p": args.top_p,
        "max_tokens": args.max_tokens,
        "max_repair_attempts": args.max_repair_attempts,
        "request_timeout": args.timeout,
        "response_field": args.response_field,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    settings.setdefault("endpoint_url", os.environ.get("PRIMOD_LLM_ENDPOINT", ""))
    if not settings.get("endpoint_url"):
        raise ConfigError("no LLM endpoint configured (use --endpoint, --config or PRIMOD_LLM_ENDPOINT)")
    if not settings.get("model_name"):
        raise ConfigError("no model name configured (use --model or --config)")
    known = set(ModelConfig.__dataclass_fields__)
    unknown = sorted(set(settings) - known)
    if unknown:
        raise ConfigError(f"unknown model settings: {', '.join(unknown)}")
    try:
        return ModelConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model settings: {exc}") from None


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        config = RunConfig(
            dfd_path=Path(args.dfd),
            index_path=Path(args.index),
            output_dir=Path(args.out),
            model=_model_config(args),
            template_path=Path(args.template) if args.template else None,
            k=args.k,
            concurrency=args.concurrency,
            max_prompt_chars=args.max_prompt_chars or None,
            linddun_kb_path=Path(args.linddun_kb) if args.linddun_kb else None,
            ai_kb_path=Path(args.ai_kb) if args.ai_kb else None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    outcome = run_analysis(config, _embedder(args))
    print(
        f"{outcome.results_path}: {len(outcome.results)} flow(s) done "
        f"({len(outcome.skipped)} resumed), {len(outcome.failed)} failed"
    )
    if outcome.failed:
        print("failed: " + ", ".join(outcome.failed), file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _source(value: str) -> SourceKb | None:
    return None if value == "all" else SourceKb(value)


def cmd_layer_a(args: argparse.Namespace) -> int:
    source = _source(args.source)
    system, refs = load_profiles(args.reference, source)
    if args.reference_model:
        if args.reference_model not in refs:
            raise ConfigError(f"{args.reference}: no model {args.reference_model!r} (have {sorted(refs)})")
        reference = refs[args.reference_model]
    elif len(refs) == 1:
        reference = next(iter(refs.values()))
    else:
        raise ConfigError(f"{args.reference} holds several models; pick one with --reference-model")
    candidates = []
    for path in args.candidate:
        _, profiles = load_profiles(path, source)
        candidates += [p for name, p in profiles.items() if not (name == reference.model and path == args.reference)]
    _write_json(args.out, layer_a(candidates, reference, args.system or system))
    return EXIT_OK


def cmd_layer_b(args: argparse.Namespace) -> int:
    a, b = load_results(args.a), load_results(args.b)
    _write_json(args.out, layer_b(a, b, args.tau, args.system or ""))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    docs_a = [load_layer_a(p) for p in args.layer_a]
    docs_b = [load_layer_b(p) for p in args.layer_b]
    if not docs_a and not docs_b:
        raise ConfigError("nothing to report: pass --layer-a and/or --layer-b")
    text = render(summarize(docs_a, docs_b), args.format)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    if args.figures:
        for path in write_figures(docs_a, docs_b, args.figures):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_report_clusters(args: argparse.Namespace) -> int:
    a, b = (load_results(p) for p in args.results)
    _write_json(args.out, clusters_document(a, b, args.tau))
    return EXIT_OK


def cmd_stub_server(args: argparse.Namespace) -> int:
    from .stub import StubLLMServer

    server = StubLLMServer(args.responses, host=args.host, port=args.port, delay=args.delay)
    print(f"stub endpoint listening on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #
def _add_embedder_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embedder", choices=["offline", "remote"], default="offline")
    p.add_argument("--dimension", type=int, default=None, help="offline embedder dimension (default 256)")
    p.add_argument("--embed-endpoint", default=None, help="remote embedder URL (or PRIMOD_EMBED_ENDPOINT)")
    p.add_argument("--embed-model", default=None)
    p.add_argument("--embed-field", default=None, help="dotted path to the vector in the reply")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="primod", description="Lifecycle-aware privacy threat modeling for AI systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="chunk and embed the knowledge bases")
    p.add_argument("--linddun-kb", default=str(_data("linddun_kb.json")))
    p.add_argument("--ai-kb", default=str(_data("ai_privacy_kb.json")))
    p.add_argument("--out", required=True)
    p.add_argument("--max-chunk-chars", type=int, default=1200)
    p.add_argument("--workers", type=int, default=1)
    _add_embedder_options(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("analyze", help="run the per-flow threat analysis")
    p.add_argument("--dfd", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--template", default=None, help="prompt template (default: shipped template)")
    p.add_argument("--model", default=None)
    p.add_argument("--endpoint", default=None, help="chat endpoint URL (or PRIMOD_LLM_ENDPOINT)")
    p.add_argument("--config", default=None, help="JSON file with model settings")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--concurrency", type=int, default=2)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--max-repair-attempts", type=int, default=None)
    p.add_argument("--timeout", type=float, default=None, help="per-request timeout in seconds")
    p.add_argument("--response-field", default=None)
    p.add_argument("--max-prompt-chars", type=int, default=24000, help="0 disables the budget")
    p.add_argument("--linddun-kb", default=None, help="check the index against this KB")
    p.add_argument("--ai-kb", default=None)
    _add_embedder_options(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("evaluate", help="compute Layer-A or Layer-B metrics")
    ev = p.add_subparsers(dest="layer", required=True)
    pa = ev.add_parser("layer-a", help="LINDDUN category coverage against a reference")
    pa.add_argument("--candidate", nargs="+", required=True, help="results files or profile documents")
    pa.add_argument("--reference", required=True)
    pa.add_argument("--reference-model", default=None, help="model to use when the reference holds several")
    pa.add_argument("--source", choices=["all", "LINDDUN", "AI_PRIVACY_KB"], default="all",
                    help="only count threats from this source when reading results files")
    pa.add_argument("--system", default=None)
    pa.add_argument("--out", default=None)
    pa.set_defaults(func=cmd_layer_a)
    pb = ev.add_parser("layer-b", help="cross-model agreement over threat clusters")
    pb.add_argument("--a", required=True)
    pb.add_argument("--b", required=True)
    pb.add_argument("--tau", type=float, default=0.20)
    pb.add_argument("--system", default=None)
    pb.add_argument("--out", default=None)
    pb.set_defaults(func=cmd_layer_b)

    p = sub.add_parser("report", help="summary table and figures")
    p.add_argument("--layer-a", nargs="*", default=[])
    p.add_argument("--layer-b", nargs="*", default=[])
    p.add_argument("--format", choices=["json", "markdown"], default="json")
    p.add_argument("--out", default=None)
    p.add_argument("--figures", default=None, help="directory for PNG figures")
    p.set_defaults(func=cmd_report)
    rs = p.add_subparsers(dest="report_command")
    pc = rs.add_parser("clusters", help="threat-cluster partition of two runs")
    pc.add_argument("--results", nargs=2, required=True, metavar=("A", "B"))
    pc.add_argument("--tau", type=float, default=0.20)
    pc.add_argument("--out", default=None)
    pc.set_defaults(func=cmd_report_clusters)

    p = sub.add_parser("stub-server", help="serve canned LLM replies for offline runs")
    p.add_argument("--responses", required=True, help="directory of <df_id>.json replies")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=11434)
    p.add_argument("--delay", type=float, default=0.0)
    p.set_defaults(func=cmd_stub_server)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrimodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
