"""Tokenization helpers shared by the embedder and the name normalizer."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_NON_ALNUM = re.compile(r"[\W_]+")


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    text = resources.files("primod").joinpath("data/stopwords.txt").read_text("utf-8")
    return frozenset(
        line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def tokenize(text: str) -> list[str]:
    """Lowercase, turn every non-alphanumeric run into a space, split."""
    return _NON_ALNUM.sub(" ", text.lower()).split()
