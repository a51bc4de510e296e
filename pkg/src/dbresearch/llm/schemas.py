"""Output schemas for structured model calls.

A schema is a named parse function ``text -> value`` that raises
``SchemaViolation`` with a message the model can act on when re-asked.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from typing import Any, Callable, Literal

from pydantic import BaseModel, ValidationError, field_validator

from ..models import Destination, ExplorationQuestion, word_count


class SchemaViolation(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    schema_id: str
    parse: Callable[[str], Any]


_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")
_BARE = re.compile(r"\b(true|false|null)\b")


def _pairs_hook(pairs):
    # keep duplicate keys visible as a list of pairs under a sentinel
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        return {"__pairs__": pairs}
    return dict(pairs)


def load_json(text: str, *, keep_duplicates: bool = False) -> Any:
    """Lenient JSON extraction: fences, surrounding prose, Python literals."""
    raw = _FENCE.sub("", (text or "").strip())
    hook = _pairs_hook if keep_duplicates else None
    candidates = [raw]
    start, end = raw.find("{"), raw.rfind("}")
    if start != -1 and end > start:
        candidates.append(raw[start : end + 1])
    for cand in candidates:
        try:
            return json.loads(cand, object_pairs_hook=hook)
        except (json.JSONDecodeError, TypeError):
            pass
    for cand in candidates[::-1]:
        for attempt in (cand, _BARE.sub(lambda m: {"true": "True", "false": "False", "null": "None"}[m.group(1)], cand)):
            try:
                value = ast.literal_eval(attempt)
            except (ValueError, SyntaxError, MemoryError, RecursionError):
                continue
            if isinstance(value, (dict, list)):
                return value
    raise SchemaViolation("response is not valid JSON")


def _validated(model: type[BaseModel], text: str) -> BaseModel:
    data = load_json(text)
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise SchemaViolation(short_error(exc)) from None


def short_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors()[:3]:
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


class _QuestionOut(BaseModel):
    question: str
    destination: Literal["database", "internet"]


class _QuestionsOut(BaseModel):
    questions: list[_QuestionOut]


def _parse_questions(text: str) -> list[ExplorationQuestion]:
    out = _validated(_QuestionsOut, text)
    questions = [
        ExplorationQuestion(text=q.question, destination=Destination(q.destination))
        for q in out.questions
        if q.question.strip()
    ]
    if not questions:
        raise SchemaViolation("questions: at least one non-empty question required")
    return questions


class _ViewQueriesOut(BaseModel):
    reasoning: str = ""
    queries: list[str]

    @field_validator("queries")
    @classmethod
    def _select_only(cls, v: list[str]) -> list[str]:
        if not v:
            raise ValueError("at least one query required")
        for sql in v:
            if not re.match(r"\s*select\b", sql, re.IGNORECASE):
                raise ValueError(f"query must start with SELECT: {sql[:60]!r}")
        return v


def _parse_view_queries(text: str) -> list[str]:
    return list(_validated(_ViewQueriesOut, text).queries)


def _parse_consistency(text: str) -> dict[str, str | None]:
    data = load_json(text)
    if not isinstance(data, dict):
        raise SchemaViolation("expected a JSON object keyed by node id")
    out: dict[str, str | None] = {}
    for key, node in data.items():
        if not isinstance(node, dict):
            raise SchemaViolation(f"{key}: expected an object with follow_up_question")
        follow = node.get("follow_up_question")
        if follow is not None and not isinstance(follow, str):
            raise SchemaViolation(f"{key}.follow_up_question: expected string or None")
        if isinstance(follow, str) and follow.strip().lower() in ("", "none", "null"):
            follow = None
        out[str(key)] = follow
    return out


def _parse_selection(text: str) -> list[tuple[str, str]]:
    data = load_json(text, keep_duplicates=True)
    if isinstance(data, dict) and "__pairs__" in data:
        pairs = data["__pairs__"]
    elif isinstance(data, dict):
        pairs = list(data.items())
    else:
        raise SchemaViolation("expected a JSON object mapping node_id to insight")
    out = []
    for key, value in pairs:
        if not isinstance(value, str):
            raise SchemaViolation(f"{key}: insight must be a string")
        out.append((str(key), value))
    return out


class _ThesisOut(BaseModel):
    thesis: str
    research_strategy: str = ""

    @field_validator("thesis")
    @classmethod
    def _short(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("thesis must be non-empty")
        if word_count(v) > 10:
            raise ValueError("thesis title must be at most 10 words")
        return v


class _ThesesOut(BaseModel):
    theses: list[_ThesisOut]


class _RefinementOut(_ThesisOut):
    decision: str = ""


def _parse_theses(text: str) -> list[tuple[str, str]]:
    return [(t.thesis, t.research_strategy) for t in _validated(_ThesesOut, text).theses]


def _parse_refinement(text: str) -> tuple[str, str, str]:
    out = _validated(_RefinementOut, text)
    return out.thesis, out.research_strategy, out.decision.lower()


class _TitleOut(BaseModel):
    title: str
    subtitle: str = ""
    editorial_angle: str = ""


class _GroundingOut(BaseModel):
    is_entailed: bool
    issue: str = ""


class _PolishOut(BaseModel):
    report_markdown: str


class _CriterionOut(BaseModel):
    name: str
    description: str


class _CriteriaOut(BaseModel):
    criteria: list[_CriterionOut]


class _ClaimsOut(BaseModel):
    claims: list[str]


class _AttributionOut(BaseModel):
    attribution: Literal["database", "internet"]


class _QueriesOut(BaseModel):
    queries: list[str]


class _WarmReportOut(BaseModel):
    report_markdown: str
    insights: list[str]


class _AnswerOut(BaseModel):
    answer: str


def model_schema(schema_id: str, model: type[BaseModel]) -> Schema:
    return Schema(schema_id, lambda text: _validated(model, text))


def text_schema(schema_id: str = "text") -> Schema:
    def parse(text: str) -> str:
        if not (text or "").strip():
            raise SchemaViolation("empty response")
        return text.strip()

    return Schema(schema_id, parse)


QUESTIONS = Schema("questions", _parse_questions)
VIEW_QUERIES = Schema("view_queries", _parse_view_queries)
CONSISTENCY = Schema("consistency", _parse_consistency)
SELECTION = Schema("insight_selection", _parse_selection)
THESES = Schema("theses", _parse_theses)
REFINEMENT = Schema("thesis_refinement", _parse_refinement)
TITLE_PACKAGE = model_schema("title_package", _TitleOut)
GROUNDING = model_schema("grounding", _GroundingOut)
POLISH = model_schema("polish", _PolishOut)
CRITERIA = model_schema("criteria", _CriteriaOut)
CLAIMS = model_schema("claims", _ClaimsOut)
ATTRIBUTION = model_schema("attribution", _AttributionOut)
SEARCH_QUERIES = model_schema("search_queries", _QueriesOut)
WARM_REPORT = model_schema("warmstart_report", _WarmReportOut)
INTERNET_ANSWER = model_schema("internet_answer", _AnswerOut)
TEXT = text_schema()
