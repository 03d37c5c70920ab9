"""Threat-name normalization and single-linkage Jaccard clustering.

Normalization pipeline: lowercase, non-alphanumerics to spaces, whitespace
tokenization, stopword removal, suffix-stripping stemmer, deduplication.

Stemmer rules (version ``suffix-v1``), tried in this order, first match
wins, and only if the remaining stem keeps at least 3 characters::

    -ing, -ion, -ed, -es, -s (not after another s), -al

``-tion`` words are covered by ``-ion`` (``location`` -> ``locat``). Rules are
applied repeatedly until the token stops changing so that stemming is
idempotent, and stems that land on a stopword are dropped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import EmptyAfterNormalization
from .text import default_stopwords, tokenize

STEMMER_VERSION = "suffix-v1"
SUFFIXES = ("ing", "ion", "ed", "es", "s", "al")
MIN_STEM = 3
DEFAULT_TAU = 0.20


@dataclass(frozen=True)
class ClusterConfig:
    tau: float = DEFAULT_TAU
    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    stemmer: str = STEMMER_VERSION

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.stemmer != STEMMER_VERSION:
            raise ValueError(f"unknown stemmer rules {self.stemmer!r}")


@dataclass(frozen=True)
class TokenSet:
    tokens: frozenset[str]
    origin: str

    def render(self) -> str:
        return " ".join(sorted(self.tokens))


def _strip_once(token: str) -> str:
    for suffix in SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= MIN_STEM:
            if suffix == "s" and token.endswith("ss"):
                continue
            return token[: -len(suffix)]
    return token


def stem(token: str) -> str:
    while True:
        shorter = _strip_once(token)
        if shorter == token:
            return token
        token = shorter


def normalize_name(name: str, config: ClusterConfig | None = None) -> TokenSet:
    config = config or ClusterConfig()
    tokens = set()
    for tok in tokenize(name):
        if tok in config.stopwords:
            continue
        s = stem(tok)
        if s not in config.stopwords:
            tokens.add(s)
    if not tokens:
        raise EmptyAfterNormalization(f"threat name {name!r} has no content tokens")
    return TokenSet(frozenset(tokens), name)


def token_jaccard(a: TokenSet | frozenset[str], b: TokenSet | frozenset[str]) -> float:
    sa = a.tokens if isinstance(a, TokenSet) else a
    sb = b.tokens if isinstance(b, TokenSet) else b
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


Occurrence = tuple[str, str, str]  # (raw name, model label, df_id)


@dataclass(frozen=True)
class ThreatCluster:
    cluster_id: str
    members: tuple[Occurrence, ...]
    representative: str
    quarantined: bool = False

    @property
    def names(self) -> list[str]:
        return sorted({m[0] for m in self.members})

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "representative": self.representative,
            "quarantined": self.quarantined,
            "members": [{"name": n, "model": m, "df_id": d} for n, m, d in self.members],
        }


def _cluster_id(names: Iterable[str]) -> str:
    digest = hashlib.sha256("\x1f".join(sorted(set(names))).encode("utf-8")).hexdigest()
    return "TC-" + digest[:10]


def _components(token_sets: Sequence[frozenset[str]], tau: float) -> list[list[int]]:
    """Connected components of the graph with an edge where Jaccard > tau."""
    n = len(token_sets)
    # inverted index: only pairs sharing a token can have Jaccard > 0
    postings: dict[str, list[int]] = {}
    for i, ts in enumerate(token_sets):
        for t in ts:
            postings.setdefault(t, []).append(i)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        stack, comp = [start], []
        while stack:
            i = stack.pop()
            comp.append(i)
            candidates = {j for t in token_sets[i] for j in postings[t]}
            for j in candidates:
                if not seen[j] and token_jaccard(token_sets[i], token_sets[j]) > tau:
                    seen[j] = True
                    stack.append(j)
        comps.append(sorted(comp))
    return comps


def cluster(occurrences: Iterable[Occurrence], config: ClusterConfig | None = None) -> list[ThreatCluster]:
    """Partition threat-name occurrences into clusters.

    Nodes are distinct raw names, so repeated names always share a cluster.
    Names that normalize to nothing become quarantined singletons. Output is
    sorted by representative, then cluster_id.
    """
    config = config or ClusterConfig()
    occurrences = [tuple(o) for o in occurrences]
    by_name: dict[str, list[Occurrence]] = {}
    for occ in occurrences:
        by_name.setdefault(occ[0], []).append(occ)

    names = sorted(by_name)
    normal: list[str] = []
    token_sets: list[frozenset[str]] = []
    quarantined: list[str] = []
    for name in names:
        try:
            token_sets.append(normalize_name(name, config).tokens)
            normal.append(name)
        except EmptyAfterNormalization:
            quarantined.append(name)

    groups = [([normal[i] for i in comp], False) for comp in _components(token_sets, config.tau)]
    groups += [([q], True) for q in quarantined]

    clusters = []
    for group_names, is_quarantined in groups:
        members = tuple(sorted(occ for n in group_names for occ in by_name[n]))
        clusters.append(
            ThreatCluster(
                cluster_id=_cluster_id(group_names),
                members=members,
                representative=min(group_names),
                quarantined=is_quarantined,
            )
        )
    clusters.sort(key=lambda c: (c.representative, c.cluster_id))
    return clusters
