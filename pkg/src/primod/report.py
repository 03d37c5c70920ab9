"""Summary tables (JSON / markdown) and figures for evaluation outputs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Sequence

from .errors import MalformedFile

REPORT_SCHEMA = "primod.report/v1"


def _load(path: str | Path, schema: str) -> dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedFile(f"{path}: not found") from None
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict) or data.get("schema") != schema:
        raise MalformedFile(f"{path}: expected a {schema} document")
    return data


def load_layer_a(path: str | Path) -> dict[str, Any]:
    return _load(path, "primod.layer_a/v1")


def load_layer_b(path: str | Path) -> dict[str, Any]:
    return _load(path, "primod.layer_b/v1")


def summarize(layer_a: Sequence[dict[str, Any]], layer_b: Sequence[dict[str, Any]]) -> dict[str, Any]:
    rows_a = []
    for doc in layer_a:
        ref = doc["reference"]
        rows_a.append(
            {"system": doc.get("system", ""), "model": ref["model"], "pillar_recall": None,
             "avg_coverage": ref["avg_coverage"], "avg_jaccard": None}
        )
        for cand in doc["candidates"]:
            rows_a.append(
                {"system": doc.get("system", ""), "model": cand["model"], "pillar_recall": cand["pillar_recall"],
                 "avg_coverage": cand["avg_coverage"], "avg_jaccard": cand["avg_jaccard"]}
            )
    rows_b = [
        {"system": doc.get("system", ""), "model_pair": " <-> ".join(doc["models"]), "kappa": doc["kappa"],
         "P_o": doc["P_o"], "pabak": doc["pabak"], "robustness": doc["robustness"], "tau": doc.get("tau")}
        for doc in layer_b
    ]
    return {"schema": REPORT_SCHEMA, "layer_a": rows_a, "layer_b": rows_b}


def _pct(x: float | None) -> str:
    return "--" if x is None else f"{100 * x:.1f}%"


def _num(x: float | None, digits: int) -> str:
    return "--" if x is None else f"{x:.{digits}f}"


def to_markdown(summary: dict[str, Any]) -> str:
    out = []
    if summary["layer_a"]:
        out += [
            "### Layer A: LINDDUN categories against the reference tool",
            "",
            "| System | Model | Reference recall | Avg. coverage | Avg. Jaccard |",
            "|---|---|---|---|---|",
        ]
        for r in summary["layer_a"]:
            out.append(
                f"| {r['system']} | {r['model']} | {_pct(r['pillar_recall'])} | "
                f"{_pct(r['avg_coverage'])} | {_num(r['avg_jaccard'], 3)} |"
            )
        out.append("")
    if summary["layer_b"]:
        out += [
            "### Layer B: cross-model agreement",
            "",
            "| System | Model pair | kappa | P_o | PABAK | R |",
            "|---|---|---|---|---|---|",
        ]
        for r in summary["layer_b"]:
            out.append(
                f"| {r['system']} | {r['model_pair']} | {r['kappa']:.4f} | {r['P_o']:.4f} | "
                f"{r['pabak']:.4f} | {r['robustness']:.4f} |"
            )
        out.append("")
    return "\n".join(out)


def render(summary: dict[str, Any], fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(summary, indent=2) + "\n"
    if fmt == "markdown":
        return to_markdown(summary)
    raise ValueError(f"unknown format {fmt!r}")


# --------------------------------------------------------------------------- #
# figures
# --------------------------------------------------------------------------- #
def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text).strip("_") or "system"


def coverage_figure(doc: dict[str, Any], path: Path) -> Path:
    """Grouped bars of per-flow category coverage, one group per data flow."""
    plt = _pyplot()
    series = [(doc["reference"]["model"], doc["reference"]["per_df"])]
    series += [(c["model"], c["per_df"]) for c in doc["candidates"]]
    dfs = list(series[0][1])
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(dfs) + 2), 3.5))
    for i, (name, per_df) in enumerate(series):
        xs = [j + i * width for j in range(len(dfs))]
        ax.bar(xs, [100 * per_df[d]["coverage"] for d in dfs], width, label=name)
    ax.set_xticks([j + width * (len(series) - 1) / 2 for j in range(len(dfs))], dfs)
    ax.set_ylabel("category coverage (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"LINDDUN coverage per flow: {doc.get('system', '')}")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def presence_figure(doc: dict[str, Any], path: Path) -> Path:
    """Cluster x flow heatmap: 0 both absent, 1 only A, 2 only B, 3 both."""
    import numpy as np

    plt = _pyplot()
    from matplotlib.colors import ListedColormap

    a_lab, b_lab = doc["matrix"]["models"]
    rows = doc["matrix"]["rows"]
    clusters = list(dict.fromkeys(r["cluster_id"] for r in rows))
    dfs = list(dict.fromkeys(r["df_id"] for r in rows))
    grid = np.zeros((len(clusters), len(dfs)), dtype=int)
    ci = {c: i for i, c in enumerate(clusters)}
    di = {d: i for i, d in enumerate(dfs)}
    for r in rows:
        grid[ci[r["cluster_id"]], di[r["df_id"]]] = int(r[a_lab]) + 2 * int(r[b_lab])
    reps = {c["cluster_id"]: c["representative"] for c in doc.get("clusters", [])}
    fig, ax = plt.subplots(figsize=(max(5, 0.45 * len(dfs) + 4), max(3, 0.22 * len(clusters) + 1.5)))
    cmap = ListedColormap(["#f2f2f2", "#4c72b0", "#dd8452", "#55a868"])
    ax.imshow(grid, aspect="auto", cmap=cmap, vmin=0, vmax=3, interpolation="nearest")
    ax.set_xticks(range(len(dfs)), dfs, rotation=90)
    ax.set_yticks(range(len(clusters)), [reps.get(c, c)[:40] for c in clusters], fontsize=6)
    handles = [plt.Rectangle((0, 0), 1, 1, color=cmap(i)) for i in range(1, 4)]
    ax.legend(handles, [f"only {a_lab}", f"only {b_lab}", "both"], fontsize="x-small",
              loc="upper left", bbox_to_anchor=(1.01, 1))
    ax.set_title(f"Threat-cluster presence: {doc.get('system', '')}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def agreement_figure(rows_b: Sequence[dict[str, Any]], path: Path) -> Path:
    plt = _pyplot()
    metrics = [("kappa", "kappa"), ("P_o", "P_o"), ("pabak", "PABAK"), ("robustness", "R")]
    width = 0.8 / max(1, len(rows_b))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, r in enumerate(rows_b):
        xs = [j + i * width for j in range(len(metrics))]
        ax.bar(xs, [r[k] for k, _ in metrics], width, label=r["system"] or r["model_pair"])
    ax.set_xticks([j + width * (len(rows_b) - 1) / 2 for j in range(len(metrics))], [m for _, m in metrics])
    ax.axhline(0, color="black", linewidth=0.6)
    ax.set_ylim(min(-0.05, *(r["kappa"] for r in rows_b), *(r["pabak"] for r in rows_b)) - 0.05, 1.05)
    ax.set_title("Cross-model agreement")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_figures(
    layer_a: Sequence[dict[str, Any]], layer_b: Sequence[dict[str, Any]], out_dir: str | Path
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, doc in enumerate(layer_a):
        written.append(coverage_figure(doc, out_dir / f"coverage_{i}_{_slug(doc.get('system', ''))}.png"))
    for i, doc in enumerate(layer_b):
        if doc.get("matrix", {}).get("rows"):
            written.append(presence_figure(doc, out_dir / f"presence_{i}_{_slug(doc.get('system', ''))}.png"))
    if layer_b:
        written.append(agreement_figure(summarize([], layer_b)["layer_b"], out_dir / "agreement.png"))
    return written
