"""Layer-A (LINDDUN category) and Layer-B (cross-model agreement) metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .clustering import ClusterConfig, ThreatCluster, cluster
from .errors import DfSetMismatch, EmptyMatrix, MalformedFile, OutOfRange, UnknownDf
from .kb import LinddunCategory, SourceKb
from .pipeline import RESULTS_SCHEMA, ResultsFile, load_results

PROFILES_SCHEMA = "primod.profiles/v1"
N_CATEGORIES = len(LinddunCategory)


@dataclass(frozen=True)
class CategoryProfile:
    """LINDDUN categories with at least one threat, per data flow, for one model."""

    model: str
    by_df: Mapping[str, frozenset[LinddunCategory]]

    @property
    def dfs(self) -> list[str]:
        return list(self.by_df)

    def categories(self, df: str) -> frozenset[LinddunCategory]:
        try:
            return self.by_df[df]
        except KeyError:
            raise UnknownDf(f"{self.model}: no data flow {df!r}") from None

    @classmethod
    def from_sets(cls, model: str, sets: Mapping[str, Iterable[str | LinddunCategory]]) -> "CategoryProfile":
        return cls(model, {df: frozenset(LinddunCategory.parse(c) for c in cats) for df, cats in sets.items()})

    @classmethod
    def from_results(cls, results: ResultsFile, source: SourceKb | None = None) -> "CategoryProfile":
        by_df: dict[str, set[LinddunCategory]] = {df: set() for df in results.flows}
        for r in results.results:
            cats = by_df.setdefault(r.df_id, set())
            for t in r.identified_threats:
                if source is None or t.source is source:
                    cats.add(t.linddun_category)
        return cls(results.model, {df: frozenset(c) for df, c in by_df.items()})

    def to_dict(self) -> dict[str, list[str]]:
        order = list(LinddunCategory)
        return {df: [c.abbreviation for c in sorted(cats, key=order.index)] for df, cats in self.by_df.items()}


def load_profiles(path: str | Path, source: SourceKb | None = None) -> tuple[str, dict[str, CategoryProfile]]:
    """Load category profiles from a profiles document or a results file.

    Returns ``(system, {model label: profile})``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MalformedFile(f"{path}: not found") from None
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None
    if isinstance(data, dict) and data.get("schema") == PROFILES_SCHEMA:
        models = data.get("models")
        if not isinstance(models, dict) or not models:
            raise MalformedFile(f"{path}: 'models' must be a non-empty object")
        return str(data.get("system", "")), {
            name: CategoryProfile.from_sets(name, sets) for name, sets in models.items()
        }
    if isinstance(data, list) or (isinstance(data, dict) and data.get("schema", RESULTS_SCHEMA) == RESULTS_SCHEMA):
        results = load_results(path)
        profile = CategoryProfile.from_results(results, source)
        return results.system, {profile.model: profile}
    raise MalformedFile(f"{path}: neither a profiles document nor a results file")


# --------------------------------------------------------------------------- #
# Layer A
# --------------------------------------------------------------------------- #
def category_coverage(profile: CategoryProfile, df: str) -> float:
    return len(profile.categories(df)) / N_CATEGORIES


def avg_coverage(profile: CategoryProfile) -> float:
    if not profile.by_df:
        raise UnknownDf(f"{profile.model}: profile has no data flows")
    return sum(category_coverage(profile, df) for df in profile.by_df) / len(profile.by_df)


def pillar_recall(candidate: CategoryProfile, reference: CategoryProfile) -> float:
    """Share of the reference's (flow, category) pairs that the candidate also reports."""
    if set(candidate.by_df) != set(reference.by_df):
        raise DfSetMismatch(
            f"data flows differ: {sorted(set(candidate.by_df) ^ set(reference.by_df))}"
        )
    ref_pairs = {(df, c) for df, cats in reference.by_df.items() for c in cats}
    if not ref_pairs:
        return 1.0
    cand_pairs = {(df, c) for df, cats in candidate.by_df.items() for c in cats}
    return len(ref_pairs & cand_pairs) / len(ref_pairs)


def jaccard_per_df(a: CategoryProfile, b: CategoryProfile, df: str) -> float:
    ca, cb = a.categories(df), b.categories(df)
    union = ca | cb
    if not union:
        return 1.0
    return len(ca & cb) / len(union)


def avg_jaccard(a: CategoryProfile, b: CategoryProfile) -> float:
    if set(a.by_df) != set(b.by_df):
        raise DfSetMismatch(f"data flows differ: {sorted(set(a.by_df) ^ set(b.by_df))}")
    return sum(jaccard_per_df(a, b, df) for df in a.by_df) / len(a.by_df)


def layer_a(candidates: Sequence[CategoryProfile], reference: CategoryProfile, system: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {
        "schema": "primod.layer_a/v1",
        "system": system,
        "reference": {
            "model": reference.model,
            "avg_coverage": avg_coverage(reference),
            "per_df": {df: {"categories": cats, "coverage": category_coverage(reference, df)}
                       for df, cats in reference.to_dict().items()},
        },
        "candidates": [],
    }
    for cand in candidates:
        out["candidates"].append(
            {
                "model": cand.model,
                "pillar_recall": pillar_recall(cand, reference),
                "avg_coverage": avg_coverage(cand),
                "avg_jaccard": avg_jaccard(cand, reference),
                "per_df": {
                    df: {
                        "categories": cats,
                        "coverage": category_coverage(cand, df),
                        "jaccard": jaccard_per_df(cand, reference, df),
                    }
                    for df, cats in cand.to_dict().items()
                },
            }
        )
    return out


# --------------------------------------------------------------------------- #
# Layer B
# --------------------------------------------------------------------------- #
@dataclass(frozen=True, eq=False)
class PresenceMatrix:
    rows: tuple[tuple[str, str], ...]  # (cluster_id, df_id)
    a: np.ndarray
    b: np.ndarray
    models: tuple[str, str] = ("A", "B")

    def __len__(self) -> int:
        return len(self.rows)

    @classmethod
    def from_columns(cls, a: Sequence[bool], b: Sequence[bool], models: tuple[str, str] = ("A", "B")) -> "PresenceMatrix":
        if len(a) != len(b):
            raise ValueError("columns differ in length")
        rows = tuple((f"row{i}", "-") for i in range(len(a)))
        return cls(rows, np.asarray(a, dtype=bool), np.asarray(b, dtype=bool), models)

    def to_dict(self) -> dict[str, Any]:
        return {
            "models": list(self.models),
            "rows": [
                {"cluster_id": c, "df_id": d, self.models[0]: bool(x), self.models[1]: bool(y)}
                for (c, d), x, y in zip(self.rows, self.a, self.b)
            ],
        }


def build_presence_matrix(
    clusters: Sequence[ThreatCluster], dfs: Sequence[str], models: tuple[str, str]
) -> PresenceMatrix:
    """One row per (cluster, flow) over the full cross product, so joint absence is representable."""
    present = {(c.cluster_id, df, m) for c in clusters for _, m, df in c.members}
    rows = tuple((c.cluster_id, df) for c in clusters for df in dfs)
    a = np.array([(cid, df, models[0]) in present for cid, df in rows], dtype=bool)
    b = np.array([(cid, df, models[1]) in present for cid, df in rows], dtype=bool)
    return PresenceMatrix(rows, a, b, models)


def observed_agreement(m: PresenceMatrix) -> float:
    if len(m) == 0:
        raise EmptyMatrix("presence matrix has no rows")
    return int(np.count_nonzero(m.a == m.b)) / len(m)


def cohens_kappa(m: PresenceMatrix) -> tuple[float, float, float]:
    """Return ``(kappa, P_o, P_e)`` for two binary raters."""
    p_o = observed_agreement(m)
    n = len(m)
    p_a = int(np.count_nonzero(m.a)) / n
    p_b = int(np.count_nonzero(m.b)) / n
    p_e = p_a * p_b + (1 - p_a) * (1 - p_b)
    if p_e >= 1.0:
        # both raters constant and equal, so P_o is 1 as well
        return 1.0, p_o, p_e
    return (p_o - p_e) / (1 - p_e), p_o, p_e


def pabak(p_o: float) -> float:
    if not 0.0 <= p_o <= 1.0:
        raise OutOfRange(f"observed agreement must lie in [0, 1], got {p_o}")
    return 2 * p_o - 1


def robustness(kappa: float, p_o: float, pabak_value: float) -> float:
    """Normalized robustness coefficient: the mean of kappa, P_o and PABAK."""
    if not -1.0 <= kappa <= 1.0 or not 0.0 <= p_o <= 1.0 or not -1.0 <= pabak_value <= 1.0:
        raise OutOfRange("kappa and PABAK must lie in [-1, 1], P_o in [0, 1]")
    return (kappa + p_o + pabak_value) / 3


@dataclass(frozen=True)
class AgreementReport:
    p_o: float
    p_e: float
    kappa: float
    pabak: float
    robustness: float
    n_rows: int
    system: str = ""
    models: tuple[str, str] = ("A", "B")

    def to_dict(self) -> dict[str, Any]:
        return {
            "system": self.system,
            "models": list(self.models),
            "P_o": self.p_o,
            "P_e": self.p_e,
            "kappa": self.kappa,
            "pabak": self.pabak,
            "robustness": self.robustness,
            "n_rows": self.n_rows,
        }


def agreement_report(m: PresenceMatrix, system: str = "") -> AgreementReport:
    k, p_o, p_e = cohens_kappa(m)
    pb = pabak(p_o)
    return AgreementReport(p_o, p_e, k, pb, robustness(k, p_o, pb), len(m), system, m.models)


def _labels(a: ResultsFile, b: ResultsFile) -> tuple[str, str]:
    if a.model != b.model:
        return a.model, b.model
    return f"{a.model}#1", f"{b.model}#2"


def occurrences(results: ResultsFile, label: str) -> list[tuple[str, str, str]]:
    return [(t.name, label, r.df_id) for r in results.results for t in r.identified_threats]


def layer_b(a: ResultsFile, b: ResultsFile, tau: float = 0.20, system: str = "") -> dict[str, Any]:
    labels = _labels(a, b)
    dfs = list(dict.fromkeys([*a.flows, *b.flows]))
    clusters = cluster(occurrences(a, labels[0]) + occurrences(b, labels[1]), ClusterConfig(tau=tau))
    matrix = build_presence_matrix(clusters, dfs, labels)
    report = agreement_report(matrix, system or a.system or b.system)
    return {
        "schema": "primod.layer_b/v1",
        "tau": tau,
        **report.to_dict(),
        "n_clusters": len(clusters),
        "clusters_per_model": {
            lab: sum(1 for c in clusters if any(m == lab for _, m, _ in c.members)) for lab in labels
        },
        "clusters": [c.to_dict() for c in clusters],
        "matrix": matrix.to_dict(),
    }


def clusters_document(a: ResultsFile, b: ResultsFile, tau: float = 0.20) -> dict[str, Any]:
    labels = _labels(a, b)
    clusters = cluster(occurrences(a, labels[0]) + occurrences(b, labels[1]), ClusterConfig(tau=tau))
    return {
        "schema": "primod.clusters/v1",
        "tau": tau,
        "models": list(labels),
        "clusters": [
            {**c.to_dict(), "presence": {lab: sorted({d for _, m, d in c.members if m == lab}) for lab in labels}}
            for c in clusters
        ],
        "quarantined": [c.representative for c in clusters if c.quarantined],
    }
