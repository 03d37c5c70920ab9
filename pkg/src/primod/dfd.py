"""JSON representation of the target system's data flow diagram."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .errors import DanglingReference, DuplicateId, MalformedFile, MissingField, ValidationError


class ElementKind(str, Enum):
    EXTERNAL_ENTITY = "ExternalEntity"
    PROCESS = "Process"
    DATA_STORE = "DataStore"


_ELEMENT_LISTS = {
    "external_entities": ElementKind.EXTERNAL_ENTITY,
    "processes": ElementKind.PROCESS,
    "data_stores": ElementKind.DATA_STORE,
}

# Recommended lifecycle vocabulary; DataFlow.lifecycle_stage stays free text.
LIFECYCLE_STAGES = (
    "Data Collection",
    "Model Building",
    "Training",
    "Deployment",
    "Inference",
    "Continuous Monitoring",
)


@dataclass(frozen=True)
class Element:
    id: str
    kind: ElementKind
    name: str

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name}


@dataclass(frozen=True)
class Boundary:
    id: str
    name: str
    members: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "name": self.name, "members": list(self.members)}


@dataclass(frozen=True)
class DataFlow:
    id: str
    source: str
    destination: str
    data_type: str
    sensitive_info: str
    description: str
    lifecycle_stage: str
    sensitive: bool | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "source": self.source,
            "destination": self.destination,
            "data_type": self.data_type,
        }
        if self.sensitive is not None:
            out["sensitive"] = self.sensitive
        out.update(
            sensitive_info=self.sensitive_info,
            description=self.description,
            lifecycle_stage=self.lifecycle_stage,
        )
        return out


@dataclass(frozen=True)
class DfdModel:
    external_entities: tuple[Element, ...] = ()
    processes: tuple[Element, ...] = ()
    data_stores: tuple[Element, ...] = ()
    trust_boundaries: tuple[Boundary, ...] = ()
    data_flows: tuple[DataFlow, ...] = ()
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def elements(self) -> dict[str, Element]:
        return {e.id: e for e in (*self.external_entities, *self.processes, *self.data_stores)}

    def flow(self, df_id: str) -> DataFlow:
        for f in self.data_flows:
            if f.id == df_id:
                return f
        raise KeyError(df_id)

    @property
    def flow_ids(self) -> list[str]:
        return [f.id for f in self.data_flows]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        if self.metadata:
            out["metadata"] = self.metadata
        out.update(
            external_entities=[e.to_dict() for e in self.external_entities],
            processes=[e.to_dict() for e in self.processes],
            data_stores=[e.to_dict() for e in self.data_stores],
            trust_boundaries=[b.to_dict() for b in self.trust_boundaries],
            data_flows=[f.to_dict() for f in self.data_flows],
        )
        return out


def derive_sensitive_flag(flow: DataFlow) -> bool:
    """Explicit ``sensitive`` wins; otherwise any non-blank ``sensitive_info`` counts."""
    if flow.sensitive is not None:
        return flow.sensitive
    return bool(flow.sensitive_info.strip())


class _Issues:
    """Collects every validation problem before raising."""

    def __init__(self) -> None:
        self.items: list[tuple[type[ValidationError], str]] = []

    def add(self, kind: type[ValidationError], msg: str) -> None:
        self.items.append((kind, msg))

    def raise_if_any(self) -> None:
        if not self.items:
            return
        kind, first = self.items[0]
        msgs = [m for _, m in self.items]
        summary = first if len(msgs) == 1 else f"{first} (+{len(msgs) - 1} more)"
        raise kind(summary, msgs)


def _text(raw: dict, key: str, where: str, issues: _Issues, required: bool = True) -> str:
    value = raw.get(key)
    if value is None:
        if required:
            issues.add(MissingField, f"{where}: missing field {key!r}")
        return ""
    if not isinstance(value, str):
        issues.add(MalformedFile, f"{where}: field {key!r} must be a string")
        return ""
    return value


def parse_dfd_dict(data: Any) -> DfdModel:
    """Validate a decoded DFD document. Raises with *all* issues found."""
    if not isinstance(data, dict):
        raise MalformedFile("DFD document must be a JSON object")
    issues = _Issues()
    seen_ids: set[str] = set()
    lists: dict[str, list[Element]] = {}

    for key, kind in _ELEMENT_LISTS.items():
        raw_list = data.get(key, [])
        if not isinstance(raw_list, list):
            issues.add(MalformedFile, f"{key!r} must be a list")
            raw_list = []
        items = []
        for i, raw in enumerate(raw_list):
            where = f"{key}[{i}]"
            if not isinstance(raw, dict):
                issues.add(MalformedFile, f"{where}: not an object")
                continue
            eid = _text(raw, "id", where, issues)
            if not eid:
                if "id" in raw:
                    issues.add(MissingField, f"{where}: empty id")
                continue
            if "kind" in raw and raw["kind"] != kind.value:
                issues.add(MalformedFile, f"{where}: kind {raw['kind']!r} does not match list {key!r}")
            if eid in seen_ids:
                issues.add(DuplicateId, f"duplicate element id {eid!r}")
            seen_ids.add(eid)
            items.append(Element(eid, kind, _text(raw, "name", where, issues, required=False) or eid))
        lists[key] = items

    boundaries = []
    raw_bounds = data.get("trust_boundaries", [])
    if not isinstance(raw_bounds, list):
        issues.add(MalformedFile, "'trust_boundaries' must be a list")
        raw_bounds = []
    for i, raw in enumerate(raw_bounds):
        where = f"trust_boundaries[{i}]"
        if not isinstance(raw, dict):
            issues.add(MalformedFile, f"{where}: not an object")
            continue
        bid = _text(raw, "id", where, issues)
        members = raw.get("members", [])
        if not isinstance(members, list) or not all(isinstance(m, str) for m in members):
            issues.add(MalformedFile, f"{where}: 'members' must be a list of ids")
            members = []
        for m in members:
            if m not in seen_ids:
                issues.add(DanglingReference, f"{where}: member {m!r} is not a declared element")
        boundaries.append(Boundary(bid, _text(raw, "name", where, issues, required=False), tuple(members)))

    flows = []
    flow_ids: set[str] = set()
    raw_flows = data.get("data_flows", [])
    if not isinstance(raw_flows, list):
        issues.add(MalformedFile, "'data_flows' must be a list")
        raw_flows = []
    for i, raw in enumerate(raw_flows):
        where = f"data_flows[{i}]"
        if not isinstance(raw, dict):
            issues.add(MalformedFile, f"{where}: not an object")
            continue
        fid = _text(raw, "id", where, issues)
        where = f"data flow {fid or i}"
        if fid in flow_ids:
            issues.add(DuplicateId, f"duplicate data flow id {fid!r}")
        if fid:
            flow_ids.add(fid)
        src = _text(raw, "source", where, issues)
        dst = _text(raw, "destination", where, issues)
        for role, ref in (("source", src), ("destination", dst)):
            if ref and ref not in seen_ids:
                issues.add(DanglingReference, f"{where}: {role} {ref!r} is not a declared element")
        desc = _text(raw, "description", where, issues)
        if "description" in raw and not desc.strip():
            issues.add(MissingField, f"{where}: description must be non-empty")
        sensitive = raw.get("sensitive")
        if sensitive is not None and not isinstance(sensitive, bool):
            issues.add(MalformedFile, f"{where}: 'sensitive' must be a boolean")
            sensitive = None
        flows.append(
            DataFlow(
                id=fid,
                source=src,
                destination=dst,
                data_type=_text(raw, "data_type", where, issues),
                sensitive_info=_text(raw, "sensitive_info", where, issues, required=False),
                description=desc,
                lifecycle_stage=_text(raw, "lifecycle_stage", where, issues),
                sensitive=sensitive,
            )
        )

    issues.raise_if_any()
    metadata = data.get("metadata", {})
    return DfdModel(
        external_entities=tuple(lists["external_entities"]),
        processes=tuple(lists["processes"]),
        data_stores=tuple(lists["data_stores"]),
        trust_boundaries=tuple(boundaries),
        data_flows=tuple(flows),
        metadata=metadata if isinstance(metadata, dict) else {},
    )


def parse_dfd(path: str | Path) -> DfdModel:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise MalformedFile(f"{path}: file not found") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: not valid JSON ({exc})") from None
    return parse_dfd_dict(data)


def dump_dfd(model: DfdModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
