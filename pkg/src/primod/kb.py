"""Loading, validation and chunking of the two privacy knowledge bases.

The LINDDUN KB is a forest of category roots; the AI privacy KB is a flat
list of model-centric attack entries. Both are cut into
:class:`KnowledgeFragment` objects that the retrieval index embeds.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import (
    DuplicateNodeId,
    DuplicateThreatId,
    MalformedFile,
    MissingCategory,
    MissingField,
    UnknownCategory,
)

DEFAULT_MAX_CHUNK_CHARS = 1200


class LinddunCategory(str, Enum):
    LINKABILITY = "Linkability"
    IDENTIFIABILITY = "Identifiability"
    NON_REPUDIATION = "Non-repudiation"
    DETECTABILITY = "Detectability"
    DISCLOSURE_OF_INFORMATION = "Disclosure of Information"
    UNAWARENESS = "Unawareness"
    NON_COMPLIANCE = "Non-compliance"

    @property
    def abbreviation(self) -> str:
        return _CANONICAL_ABBREV[self]

    @classmethod
    def parse(cls, value: str) -> "LinddunCategory":
        """Parse a full name or an abbreviation (case and punctuation insensitive)."""
        if isinstance(value, cls):
            return value
        if not isinstance(value, str):
            raise UnknownCategory(f"not a LINDDUN category: {value!r}")
        key = _category_key(value)
        try:
            return _CATEGORY_LOOKUP[key]
        except KeyError:
            raise UnknownCategory(f"not a LINDDUN category: {value!r}") from None


def _category_key(value: str) -> str:
    return re.sub(r"[^a-z]", "", value.lower())


_CANONICAL_ABBREV = {
    LinddunCategory.LINKABILITY: "L",
    LinddunCategory.IDENTIFIABILITY: "I",
    LinddunCategory.NON_REPUDIATION: "NR",
    LinddunCategory.DETECTABILITY: "DT",
    LinddunCategory.DISCLOSURE_OF_INFORMATION: "DI",
    LinddunCategory.UNAWARENESS: "U",
    LinddunCategory.NON_COMPLIANCE: "NC",
}

# Both notations are in common use for per-flow tables (D/DT, DD/DI, Nr/NR,
# Nc/NC). The verb forms come from the LINDDUN acronym expansion.
_ALIASES = {
    LinddunCategory.LINKABILITY: ["L", "Linking"],
    LinddunCategory.IDENTIFIABILITY: ["I", "Identifying"],
    LinddunCategory.NON_REPUDIATION: ["NR"],
    LinddunCategory.DETECTABILITY: ["DT", "D", "Detecting"],
    LinddunCategory.DISCLOSURE_OF_INFORMATION: ["DI", "DD", "Data Disclosure", "Disclosure"],
    LinddunCategory.UNAWARENESS: ["U"],
    LinddunCategory.NON_COMPLIANCE: ["NC"],
}

_CATEGORY_LOOKUP: dict[str, LinddunCategory] = {}
for _cat in LinddunCategory:
    _CATEGORY_LOOKUP[_category_key(_cat.value)] = _cat
    for _alias in _ALIASES[_cat]:
        _CATEGORY_LOOKUP[_category_key(_alias)] = _cat


class SourceKb(str, Enum):
    LINDDUN = "LINDDUN"
    AI_PRIVACY_KB = "AI_PRIVACY_KB"


# --------------------------------------------------------------------------- #
# domain types
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Reference:
    title: str
    type: str = ""
    authors: tuple[str, ...] = ()
    venue: str = ""
    year: str = ""
    pages: str = ""
    url: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.type,
            "title": self.title,
            "authors": list(self.authors),
            "journal": self.venue,
            "year": self.year,
            "pages": self.pages,
            "url": self.url,
        }


@dataclass(frozen=True)
class AiPrivacyEntry:
    threat_id: str
    name: str
    flow_type: str
    lifecycle_stage: str
    short_description: str
    justification: str
    reference: Reference

    def to_dict(self) -> dict[str, Any]:
        return {
            "threatId": self.threat_id,
            "privacyThreatName": self.name,
            "flowType": self.flow_type,
            "aiLifecycleStage": self.lifecycle_stage,
            "shortDescription": self.short_description,
            "privacyThreatJustification": self.justification,
            "reference": self.reference.to_dict(),
        }


@dataclass(frozen=True)
class LinddunNode:
    category: LinddunCategory
    node_id: str
    title: str
    description: str = ""
    examples: tuple[str, ...] = ()
    criteria: tuple[str, ...] = ()
    impacts: tuple[str, ...] = ()
    children: tuple["LinddunNode", ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category.value,
            "node_id": self.node_id,
            "title": self.title,
            "description": self.description,
            "examples": list(self.examples),
            "criteria": list(self.criteria),
            "impacts": list(self.impacts),
            "children": [c.to_dict() for c in self.children],
        }

    def walk(self, path: tuple[str, ...] = ()) -> Iterator[tuple[tuple[str, ...], "LinddunNode"]]:
        """Pre-order traversal yielding (node-id path, node)."""
        here = path + (self.node_id,)
        yield here, self
        for child in self.children:
            yield from child.walk(here)


@dataclass(frozen=True)
class KnowledgeFragment:
    fragment_id: str
    source_kb: SourceKb
    text: str
    origin_path: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "fragment_id": self.fragment_id,
            "source_kb": self.source_kb.value,
            "text": self.text,
            "origin_path": self.origin_path,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KnowledgeFragment":
        return cls(
            fragment_id=data["fragment_id"],
            source_kb=SourceKb(data["source_kb"]),
            text=data["text"],
            origin_path=data["origin_path"],
        )


# --------------------------------------------------------------------------- #
# loading
# --------------------------------------------------------------------------- #
def _read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise MalformedFile(f"{path}: file not found") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None


_AI_REQUIRED = (
    "threatId",
    "privacyThreatName",
    "flowType",
    "aiLifecycleStage",
    "shortDescription",
    "privacyThreatJustification",
    "reference",
)


def _str_list(value: Any, where: str) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedFile(f"{where}: expected a list of strings")
    return tuple(value)


def parse_ai_privacy_entries(data: Any) -> list[AiPrivacyEntry]:
    if not isinstance(data, list):
        raise MalformedFile("AI privacy KB must be a JSON array")
    entries: list[AiPrivacyEntry] = []
    seen: set[str] = set()
    for i, raw in enumerate(data):
        if not isinstance(raw, dict):
            raise MalformedFile(f"entry {i} is not an object")
        tid = str(raw.get("threatId", f"#{i}"))
        for key in _AI_REQUIRED:
            if key not in raw:
                raise MissingField(f"threat {tid}: missing field {key!r}")
        for key in ("privacyThreatName", "shortDescription"):
            if not isinstance(raw[key], str) or not raw[key].strip():
                raise MissingField(f"threat {tid}: field {key!r} is empty")
        if tid in seen:
            raise DuplicateThreatId(f"duplicate threatId {tid!r}")
        seen.add(tid)
        ref = raw["reference"]
        if not isinstance(ref, dict) or not str(ref.get("title", "")).strip():
            raise MissingField(f"threat {tid}: reference.title is required")
        entries.append(
            AiPrivacyEntry(
                threat_id=tid,
                name=raw["privacyThreatName"],
                flow_type=str(raw["flowType"]),
                lifecycle_stage=str(raw["aiLifecycleStage"]),
                short_description=raw["shortDescription"],
                justification=str(raw["privacyThreatJustification"]),
                reference=Reference(
                    title=str(ref["title"]),
                    type=str(ref.get("type", "")),
                    authors=_str_list(ref.get("authors"), f"threat {tid}: reference.authors"),
                    venue=str(ref.get("journal", ref.get("venue", ""))),
                    year=str(ref.get("year", "")),
                    pages=str(ref.get("pages", "")),
                    url=str(ref.get("url", "")),
                ),
            )
        )
    return entries


def load_ai_privacy_kb(path: str | Path) -> list[AiPrivacyEntry]:
    return parse_ai_privacy_entries(_read_json(path))


def _parse_node(
    raw: Any,
    inherited: LinddunCategory | None,
    ancestors: tuple[str, ...],
    seen: set[str],
    where: str,
) -> LinddunNode:
    if not isinstance(raw, dict):
        raise MalformedFile(f"{where}: node is not an object")
    for key in ("node_id", "title"):
        if not isinstance(raw.get(key), str) or not raw[key].strip():
            raise MissingField(f"{where}: missing field {key!r}")
    node_id = raw["node_id"]
    if node_id in ancestors:
        raise DuplicateNodeId(f"node {node_id!r} reappears beneath itself (cycle)")
    if node_id in seen:
        raise DuplicateNodeId(f"duplicate node_id {node_id!r}")
    seen.add(node_id)

    if "category" in raw:
        category = LinddunCategory.parse(raw["category"])
        if inherited is not None and category is not inherited:
            raise MalformedFile(f"{where}: category {category.value} differs from its root")
    elif inherited is not None:
        category = inherited
    else:
        raise MissingField(f"{where}: root node missing field 'category'")

    children_raw = raw.get("children", [])
    if not isinstance(children_raw, list):
        raise MalformedFile(f"{where}: 'children' must be a list")
    here = ancestors + (node_id,)
    children = tuple(
        _parse_node(c, category, here, seen, f"{where}/{node_id}[{i}]")
        for i, c in enumerate(children_raw)
    )
    return LinddunNode(
        category=category,
        node_id=node_id,
        title=raw["title"],
        description=str(raw.get("description", "")),
        examples=_str_list(raw.get("examples"), f"{node_id}.examples"),
        criteria=_str_list(raw.get("criteria"), f"{node_id}.criteria"),
        impacts=_str_list(raw.get("impacts"), f"{node_id}.impacts"),
        children=children,
    )


def parse_linddun_nodes(data: Any) -> list[LinddunNode]:
    if not isinstance(data, list):
        raise MalformedFile("LINDDUN KB must be a JSON array of category roots")
    seen: set[str] = set()
    roots = [_parse_node(raw, None, (), seen, f"root[{i}]") for i, raw in enumerate(data)]
    present = {r.category for r in roots}
    missing = [c.value for c in LinddunCategory if c not in present]
    if missing:
        raise MissingCategory(f"LINDDUN KB lacks categories: {', '.join(missing)}", missing)
    return roots


def load_linddun_kb(path: str | Path) -> list[LinddunNode]:
    return parse_linddun_nodes(_read_json(path))


def dump_ai_privacy_kb(entries: Iterable[AiPrivacyEntry], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([e.to_dict() for e in entries], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def dump_linddun_kb(roots: Iterable[LinddunNode], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([r.to_dict() for r in roots], indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


# --------------------------------------------------------------------------- #
# rendering and chunking
# --------------------------------------------------------------------------- #
def _sentence(text: str) -> str:
    text = text.strip()
    if text and text[-1] not in ".!?:":
        text += "."
    return text


def render_node(node: LinddunNode) -> str:
    """Prose rendering of one taxonomy node; its children are not included."""
    head = _sentence(f"{node.category.value}: {node.title}")
    if node.description.strip():
        head += " " + _sentence(node.description)
    paragraphs = [head]
    for label, items in (("Examples", node.examples), ("Criteria", node.criteria), ("Impacts", node.impacts)):
        if items:
            paragraphs.append(f"{label}: " + "; ".join(s.strip() for s in items) + ".")
    return "\n\n".join(paragraphs)


def render_entry(entry: AiPrivacyEntry) -> str:
    head = _sentence(entry.name) + " " + _sentence(entry.short_description)
    paragraphs = [head]
    meta = []
    if entry.flow_type.strip():
        meta.append(f"Flow type: {_sentence(entry.flow_type)}")
    if entry.lifecycle_stage.strip():
        meta.append(f"AI lifecycle stage: {_sentence(entry.lifecycle_stage)}")
    if meta:
        paragraphs.append(" ".join(meta))
    if entry.justification.strip():
        paragraphs.append("Privacy relevance: " + _sentence(entry.justification))
    return "\n\n".join(paragraphs)


_SENTENCE_END = re.compile(r"[.!?]+\s+")


def _pieces(text: str, level: int) -> list[str]:
    """Cut ``text`` after each separator of the given level, keeping separators."""
    if level == 0:
        pattern = re.compile(r"\n\s*\n")
    else:
        pattern = _SENTENCE_END
    cuts = [m.end() for m in pattern.finditer(text) if m.end() < len(text)]
    bounds = [0] + cuts + [len(text)]
    return [text[a:b] for a, b in zip(bounds, bounds[1:]) if b > a]


def split_text(text: str, max_chars: int) -> list[str]:
    """Recursive paragraph -> sentence -> hard-cut splitter.

    Lossless: ``"".join(split_text(t, n)) == t``; every piece is at most
    ``max_chars`` long. Adjacent pieces are greedily packed together.
    """
    if max_chars < 1:
        raise ValueError("max_chars must be >= 1")
    return _split(text, max_chars, 0)


def _split(text: str, max_chars: int, level: int) -> list[str]:
    if len(text) <= max_chars:
        return [text] if text else []
    if level >= 2:
        return [text[i : i + max_chars] for i in range(0, len(text), max_chars)]
    out: list[str] = []
    buf = ""
    for piece in _pieces(text, level):
        if len(piece) > max_chars:
            if buf:
                out.append(buf)
                buf = ""
            out.extend(_split(piece, max_chars, level + 1))
        elif len(buf) + len(piece) <= max_chars:
            buf += piece
        else:
            out.append(buf)
            buf = piece
    if buf:
        out.append(buf)
    return out


def _fragments_for(
    source: SourceKb, origin: str, text: str, max_chars: int
) -> list[KnowledgeFragment]:
    return [
        KnowledgeFragment(
            fragment_id=f"{source.value}:{origin}#{i}",
            source_kb=source,
            text=chunk,
            origin_path=origin,
        )
        for i, chunk in enumerate(split_text(text, max_chars))
    ]


def chunk_kb(
    linddun: Iterable[LinddunNode],
    ai: Iterable[AiPrivacyEntry],
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
) -> list[KnowledgeFragment]:
    """Cut both KBs into concept-level fragments.

    Every taxonomy node (inner nodes included) and every AI entry yields its
    own fragments, so no fragment ever spans two concepts.
    """
    fragments: list[KnowledgeFragment] = []
    for root in linddun:
        for path, node in root.walk():
            fragments.extend(
                _fragments_for(SourceKb.LINDDUN, "/".join(path), render_node(node), max_chunk_chars)
            )
    for entry in ai:
        fragments.extend(
            _fragments_for(SourceKb.AI_PRIVACY_KB, entry.threat_id, render_entry(entry), max_chunk_chars)
        )
    return fragments
