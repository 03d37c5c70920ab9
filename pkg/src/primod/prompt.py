"""Per-flow prompt instantiation and assembly with retrieved knowledge."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .dfd import DataFlow, derive_sensitive_flag
from .errors import MalformedFile, MissingContextPlaceholder, UnknownPlaceholder
from .retrieval import ScoredFragment

log = logging.getLogger(__name__)

PLACEHOLDERS = frozenset(
    {"df_id", "source", "destination", "data_type", "sensitive", "sensitive_info", "lifecycle_stage", "context"}
)
NO_CONTEXT = "No retrieved context."
DEFAULT_MAX_PROMPT_CHARS = 24_000

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
_CONTEXT = "{context}"


@dataclass(frozen=True)
class PromptTemplate:
    raw_text: str

    @property
    def placeholder_set(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER.findall(self.raw_text))


@dataclass(frozen=True)
class InstantiatedPrompt:
    df_id: str
    text_with_context_hole: str


@dataclass(frozen=True)
class AugmentedPrompt:
    df_id: str
    text: str
    used_fragment_ids: tuple[str, ...] = ()


def default_template_path() -> Path:
    return Path(str(resources.files("primod").joinpath("data/base_prompt.txt")))


def parse_template(raw: str) -> PromptTemplate:
    raw = raw.replace("\r\n", "\n").replace("\r", "\n")
    for name in _PLACEHOLDER.findall(raw):
        if name not in PLACEHOLDERS:
            raise UnknownPlaceholder(name)
    count = raw.count(_CONTEXT)
    if count == 0:
        raise MissingContextPlaceholder("template has no {context} placeholder")
    if count > 1:
        raise MissingContextPlaceholder(f"template has {count} {{context}} placeholders, expected exactly one")
    return PromptTemplate(raw)


def load_template(path: str | Path | None = None) -> PromptTemplate:
    path = Path(path) if path else default_template_path()
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MalformedFile(f"{path}: template not found") from None
    return parse_template(raw)


def instantiate(template: PromptTemplate, flow: DataFlow) -> InstantiatedPrompt:
    values = {
        "df_id": flow.id,
        "source": flow.source,
        "destination": flow.destination,
        "data_type": flow.data_type,
        "sensitive": "true" if derive_sensitive_flag(flow) else "false",
        "sensitive_info": flow.sensitive_info,
        "lifecycle_stage": flow.lifecycle_stage,
    }
    # Single regex pass: substituted values are never rescanned for braces.
    text = _PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), template.raw_text)
    return InstantiatedPrompt(flow.id, text)


def render_context(fragments: Sequence[ScoredFragment]) -> str:
    if not fragments:
        return NO_CONTEXT
    return "\n\n".join(f"[{s.fragment.source_kb.value}] {s.fragment.text.strip()}" for s in fragments)


def assemble(
    prompt: InstantiatedPrompt,
    fragments: Sequence[ScoredFragment],
    max_chars: int | None = None,
) -> AugmentedPrompt:
    """Fill the context hole with labeled fragments in rank order.

    With ``max_chars`` set, lowest-ranked fragments are dropped until the
    prompt fits.
    """
    kept = list(fragments)
    head, tail = prompt.text_with_context_hole.split(_CONTEXT, 1)
    text = head + render_context(kept) + tail
    if max_chars is not None:
        while kept and len(text) > max_chars:
            kept.pop()
            text = head + render_context(kept) + tail
        if len(kept) < len(fragments):
            log.warning(
                "%s: prompt over %d chars, dropped %d lowest-ranked fragment(s)",
                prompt.df_id,
                max_chars,
                len(fragments) - len(kept),
            )
    return AugmentedPrompt(prompt.df_id, text, tuple(s.fragment.fragment_id for s in kept))
