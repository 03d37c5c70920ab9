"""Chat-completion transport and validation of structured threat replies."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from typing import Any, Callable

import httpx
import jsonschema

from .errors import (
    DfIdMismatch,
    EmptyCompletion,
    EndpointError,
    EndpointTimeout,
    ExhaustedRepairs,
    NotJson,
    ResultError,
    SchemaViolation,
    UnknownCategory,
    UnknownCategoryInResult,
    UnknownSource,
)
from .kb import LinddunCategory, SourceKb
from .prompt import AugmentedPrompt
from .retrieval import extract_field

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.7
    top_p: float = 0.9
    max_tokens: int = 1024
    max_repair_attempts: int = 2
    request_timeout: float = 120.0
    response_field: str = "response"
    json_mode: bool = True

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.max_repair_attempts < 0:
            raise ValueError("max_repair_attempts must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ThreatRecord:
    name: str
    justification: str
    linddun_category: LinddunCategory
    ai_lifecycle_stage: str
    source: SourceKb

    def to_dict(self) -> dict[str, str]:
        return {
            "name": self.name,
            "justification": self.justification,
            "linddun_category": self.linddun_category.value,
            "ai_lifecycle_stage": self.ai_lifecycle_stage,
            "source": self.source.value,
        }


@dataclass(frozen=True)
class AnalysisResult:
    df_id: str
    identified_threats: tuple[ThreatRecord, ...] = ()
    model_name: str = ""
    run_id: str = ""
    raw_attempts: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "df_id": self.df_id,
            "identified_threats": [t.to_dict() for t in self.identified_threats],
            "model_name": self.model_name,
            "run_id": self.run_id,
            "raw_attempts": self.raw_attempts,
        }

    def to_payload(self) -> dict[str, Any]:
        """Only the fields the model itself is asked to produce."""
        return {"df_id": self.df_id, "identified_threats": [t.to_dict() for t in self.identified_threats]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AnalysisResult":
        parsed = validate_payload(
            {"df_id": data.get("df_id"), "identified_threats": data.get("identified_threats")},
            str(data.get("df_id")),
        )
        return cls(
            df_id=parsed.df_id,
            identified_threats=parsed.identified_threats,
            model_name=str(data.get("model_name", "")),
            run_id=str(data.get("run_id", "")),
            raw_attempts=int(data.get("raw_attempts", 0)),
        )


_NONBLANK = {"type": "string", "pattern": r"\S"}
RESULT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["df_id", "identified_threats"],
    "additionalProperties": False,
    "properties": {
        "df_id": _NONBLANK,
        "identified_threats": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "justification", "linddun_category", "ai_lifecycle_stage", "source"],
                "additionalProperties": False,
                "properties": {
                    "name": _NONBLANK,
                    "justification": _NONBLANK,
                    "linddun_category": _NONBLANK,
                    "ai_lifecycle_stage": _NONBLANK,
                    "source": _NONBLANK,
                },
            },
        },
    },
}
_VALIDATOR = jsonschema.Draft202012Validator(RESULT_SCHEMA)


def parse_source(value: str) -> SourceKb:
    key = re.sub(r"[\s\-]+", "_", value.strip()).upper()
    try:
        return SourceKb(key)
    except ValueError:
        raise UnknownSource(f"source must be LINDDUN or AI_PRIVACY_KB, got {value!r}") from None


def validate_payload(obj: Any, expected_df_id: str) -> AnalysisResult:
    errors = sorted(_VALIDATOR.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise SchemaViolation(path, err.message)
    if obj["df_id"] != expected_df_id:
        raise DfIdMismatch(f"reply is for {obj['df_id']!r}, expected {expected_df_id!r}")
    threats = []
    for i, t in enumerate(obj["identified_threats"]):
        try:
            category = LinddunCategory.parse(t["linddun_category"])
        except UnknownCategory as exc:
            raise UnknownCategoryInResult(f"$.identified_threats[{i}].linddun_category: {exc}") from None
        threats.append(
            ThreatRecord(
                name=t["name"].strip(),
                justification=t["justification"].strip(),
                linddun_category=category,
                ai_lifecycle_stage=t["ai_lifecycle_stage"].strip(),
                source=parse_source(t["source"]),
            )
        )
    return AnalysisResult(df_id=obj["df_id"], identified_threats=tuple(threats))


def parse_result(raw: str, expected_df_id: str) -> AnalysisResult:
    try:
        obj = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise NotJson(f"reply is not JSON: {exc}") from None
    return validate_payload(obj, expected_df_id)


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S | re.I)


def extract_json_object(raw: str) -> str | None:
    """Pull the outermost JSON object out of surrounding prose or code fences."""
    candidates = [m.group(1) for m in _FENCE.finditer(raw)] + [raw]
    decoder = json.JSONDecoder()
    for text in candidates:
        start = text.find("{")
        while start != -1:
            try:
                obj, _ = decoder.raw_decode(text, start)
            except json.JSONDecodeError:
                start = text.find("{", start + 1)
                continue
            if isinstance(obj, dict):
                return json.dumps(obj, ensure_ascii=False)
            start = text.find("{", start + 1)
    return None


# --------------------------------------------------------------------------- #
# transport
# --------------------------------------------------------------------------- #
def request_body(prompt_text: str, config: ModelConfig) -> dict[str, Any]:
    body: dict[str, Any] = {
        "model": config.model_name,
        "prompt": prompt_text,
        "options": {
            "temperature": config.temperature,
            "top_p": config.top_p,
            "num_predict": config.max_tokens,
        },
        "stream": False,
    }
    if config.json_mode:
        body["format"] = "json"
    return body


def generate(prompt: AugmentedPrompt | str, config: ModelConfig) -> str:
    text = prompt.text if isinstance(prompt, AugmentedPrompt) else prompt
    try:
        resp = httpx.post(config.endpoint_url, json=request_body(text, config), timeout=config.request_timeout)
    except httpx.TimeoutException as exc:
        raise EndpointTimeout(f"no reply from {config.endpoint_url} within {config.request_timeout}s") from exc
    except httpx.HTTPError as exc:
        raise EndpointError(f"cannot reach {config.endpoint_url}: {exc}") from exc
    if resp.status_code >= 400:
        raise EndpointError(
            f"{config.endpoint_url} answered HTTP {resp.status_code}", resp.status_code, resp.text[:500]
        )
    try:
        payload = resp.json()
    except ValueError:
        raise EndpointError("endpoint reply is not JSON", resp.status_code, resp.text[:500]) from None
    completion = extract_field(payload, config.response_field)
    if not isinstance(completion, str) or not completion.strip():
        raise EmptyCompletion(f"empty completion at {config.response_field!r}", resp.status_code)
    return completion


def corrective_prompt(prompt: AugmentedPrompt, error: Exception) -> AugmentedPrompt:
    note = (
        "\n\n### Correction\n"
        f"Your previous reply could not be accepted: {error}\n"
        'Reply with ONLY a JSON object of the form {"df_id": "' + prompt.df_id + '", '
        '"identified_threats": [...]}, where each threat has exactly the keys name, justification, '
        "linddun_category, ai_lifecycle_stage and source."
    )
    return AugmentedPrompt(prompt.df_id, prompt.text + note, prompt.used_fragment_ids)


GenerateFn = Callable[[AugmentedPrompt, ModelConfig], str]


def analyze_flow(
    prompt: AugmentedPrompt,
    config: ModelConfig,
    generate_fn: GenerateFn | None = None,
    run_id: str = "",
) -> AnalysisResult:
    """Generate, validate and, if needed, repair one flow's reply.

    Cheap fix first (extract the JSON object from surrounding noise), then
    re-prompt with the validation error. At most ``1 + max_repair_attempts``
    generate calls are made. A df_id echo mismatch is never retried.
    """
    gen = generate_fn or generate
    current = prompt
    last_error: Exception | None = None
    raw = ""
    for attempt in range(1, config.max_repair_attempts + 2):
        raw = gen(current, config)
        try:
            result = parse_result(raw, prompt.df_id)
        except DfIdMismatch:
            raise
        except ResultError as exc:
            last_error = exc
            extracted = extract_json_object(raw)
            result = None
            if extracted is not None:
                try:
                    result = validate_payload(json.loads(extracted), prompt.df_id)
                except DfIdMismatch:
                    raise
                except ResultError as exc2:
                    last_error = exc2
            if result is None:
                log.warning("%s: invalid reply on attempt %d: %s", prompt.df_id, attempt, last_error)
                current = corrective_prompt(prompt, last_error)
                continue
        return AnalysisResult(
            df_id=result.df_id,
            identified_threats=result.identified_threats,
            model_name=config.model_name,
            run_id=run_id,
            raw_attempts=attempt,
        )
    assert last_error is not None
    raise ExhaustedRepairs(last_error, raw, config.max_repair_attempts + 1)
