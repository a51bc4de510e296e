"""Automatic evaluation: criteria matching, database attribution, insight recall.

Judges are ordinary gateway calls, so any provider (live, scripted, recorded)
can act as the judge. External RACE scores are read from files and reported
as-is; they are never computed here.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Sequence

from pydantic import BaseModel, ValidationError

from .llm import schemas
from .llm.gateway import Gateway, StructuredOutputError
from .llm.schemas import Schema, SchemaViolation, load_json
from .models import word_count

SCORE_SET = (0.0, 0.25, 0.5, 0.75, 1.0)
_MARKERS = re.compile(r"\s*\[\d+(?:\s*,\s*\d+)*\]")
_RATING = re.compile(r"<rating>\s*(\d+(?:\.0+)?)\s*</rating>", re.IGNORECASE)
_SOURCES = re.compile(r"^#+\s*sources\b.*", re.IGNORECASE | re.MULTILINE | re.DOTALL)


def strip_markers(text: str) -> str:
    return _MARKERS.sub("", text).strip()


def strip_sources(article: str) -> str:
    return _SOURCES.sub("", article).strip()


# ---- criteria matching -----------------------------------------------------

@dataclass(frozen=True)
class Criterion:
    name: str
    description: str
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class CriterionScore:
    name: str
    score: float
    explanation: str = ""

    def __post_init__(self):
        if self.score not in SCORE_SET:
            raise ValueError(f"score {self.score} not in {SCORE_SET}")


def derive_criteria(gateway: Gateway, reference_article: str, task: str) -> list[Criterion]:
    if not reference_article.strip():
        raise ValueError("reference article is empty")
    out = gateway.complete_structured(
        "criteria_matching_gen", {"task_prompt": task, "reference_article": reference_article},
        schemas.CRITERIA,
    )
    criteria = []
    for c in out.criteria:
        if not c.name.strip():
            continue
        n = word_count(c.name)
        flags = () if 3 <= n <= 6 else (f"name has {n} words (expected 3-6)",)
        criteria.append(Criterion(c.name.strip(), c.description.strip(), flags))
    if not criteria:
        raise StructuredOutputError("criteria_matching_gen", "no criteria returned")
    return criteria


class _ScoreOut(BaseModel):
    name: str = ""
    score: float
    explanation: str = ""


class _GradeOut(BaseModel):
    criterion_scores: list[_ScoreOut]


@dataclass
class GradeResult:
    scores: list[CriterionScore | None]  # None: unscored, excluded from the mean
    mean: float | None
    flags: list[str] = field(default_factory=list)


def mean_score(scores: Sequence[CriterionScore | None]) -> float | None:
    valid = [s.score for s in scores if s is not None]
    return sum(valid) / len(valid) if valid else None


def _grade_schema(holder: dict) -> Schema:
    def parse(text: str) -> list[_ScoreOut]:
        try:
            out = _GradeOut.model_validate(load_json(text))
        except ValidationError as exc:
            raise SchemaViolation(schemas.short_error(exc)) from None
        holder["last"] = out.criterion_scores
        bad = [s.name or str(i) for i, s in enumerate(out.criterion_scores) if s.score not in SCORE_SET]
        if bad:
            raise SchemaViolation(f"scores for {bad} must be one of 0, 0.25, 0.5, 0.75, 1.0")
        return out.criterion_scores

    return Schema("criterion_scores", parse)


def grade(
    gateway: Gateway, article: str, criteria: Sequence[Criterion], task: str, retries: int | None = None
) -> GradeResult:
    if not criteria:
        raise ValueError("at least one criterion is required")
    holder: dict[str, Any] = {}
    flags: list[str] = []
    bindings = {
        "task_prompt": task,
        "criteria": json.dumps([{"name": c.name, "description": c.description} for c in criteria], indent=1),
        "generated_article": article,
    }
    try:
        raw = gateway.complete_structured("criteria_matching_grade", bindings, _grade_schema(holder), retries)
    except StructuredOutputError as exc:
        if "last" not in holder:
            raise
        raw = holder["last"]
        flags.append(f"out-of-set scores after retries: {exc}")
    by_name = {s.name.strip().lower(): s for s in raw}
    scores: list[CriterionScore | None] = []
    for i, c in enumerate(criteria):
        s = by_name.get(c.name.lower()) or (raw[i] if i < len(raw) else None)
        if s is None or s.score not in SCORE_SET:
            flags.append(f"unscored: {c.name}")
            scores.append(None)
        else:
            scores.append(CriterionScore(c.name, float(s.score), s.explanation))
    return GradeResult(scores, mean_score(scores), flags)


# ---- attribution -----------------------------------------------------------

@dataclass(frozen=True)
class AtomicClaim:
    text: str
    attribution: Literal["database", "internet"] | None = None


def decompose(gateway: Gateway, article: str) -> list[AtomicClaim]:
    """Itemised claims; the sources appendix is dropped and citation markers stripped."""
    body = strip_sources(article)
    if not body:
        raise ValueError("article is empty")
    out = gateway.complete_structured("atomic_breakdown", {"article": body}, schemas.CLAIMS)
    claims = [AtomicClaim(strip_markers(c)) for c in out.claims if strip_markers(c)]
    if not claims:
        raise StructuredOutputError("atomic_breakdown", "no claims returned")
    return claims


def attribute(gateway: Gateway, claim: str, topic: str) -> str:
    claim = strip_markers(claim)
    if not claim:
        raise ValueError("claim is empty")
    out = gateway.complete_structured(
        "insight_attribution", {"article_topic": topic, "evidence": claim}, schemas.ATTRIBUTION
    )
    return out.attribution


@dataclass
class AttributionResult:
    claims: list[AtomicClaim]
    ratio: float | None
    flags: list[str] = field(default_factory=list)


def db_use_ratio(gateway: Gateway, article: str, topic: str, max_workers: int = 4) -> AttributionResult:
    claims = decompose(gateway, article)

    def label(claim: AtomicClaim):
        try:
            return attribute(gateway, claim.text, topic), None
        except StructuredOutputError as exc:
            return None, f"excluded claim: {claim.text[:60]} ({exc})"

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        labels = list(pool.map(label, claims))
    out = [AtomicClaim(c.text, lab) for c, (lab, _) in zip(claims, labels)]
    flags = [f for _, f in labels if f]
    return AttributionResult(out, ratio_of(out), flags)


def ratio_of(claims: Sequence[AtomicClaim]) -> float | None:
    labelled = [c for c in claims if c.attribution is not None]
    if not labelled:
        return None
    return sum(c.attribution == "database" for c in labelled) / len(labelled)


# ---- insight recall --------------------------------------------------------

def parse_rating(text: Any) -> int | None:
    """First ``<rating>N</rating>`` with integer N in 1..10; None otherwise."""
    if not isinstance(text, str):
        return None
    for m in _RATING.finditer(text):
        value = int(float(m.group(1)))
        if 1 <= value <= 10:
            return value
    return None


def _rating_schema() -> Schema:
    def parse(text: str) -> int:
        value = parse_rating(text)
        if value is None:
            raise SchemaViolation("wrap a single integer rating from 1 to 10 in <rating></rating> tags")
        return value

    return Schema("rating", parse)


RATING = _rating_schema()


@dataclass
class RecallResult:
    ratings: list[list[int | None]]  # [gold][predicted]
    per_gold: list[float]
    mean: float
    flags: list[str] = field(default_factory=list)


def judge(gateway: Gateway, predicted: str, gold: str, retries: int | None = None) -> int | None:
    try:
        return gateway.complete_structured(
            "insightbench_eval", {"answer": predicted, "gt_answer": gold}, RATING, retries
        )
    except StructuredOutputError:
        return None


def recall_from_ratings(ratings: Sequence[Sequence[int | None]]) -> tuple[list[float], float]:
    """Per gold: max over predicted of rating/10 (unparsable = 0); overall: mean over gold."""
    per_gold = [max(((r or 0) / 10 for r in row), default=0.0) for row in ratings]
    return per_gold, sum(per_gold) / len(per_gold)


def insight_recall(
    gateway: Gateway, predicted: Sequence[str], gold: Sequence[str], max_workers: int = 4
) -> RecallResult:
    if not predicted or not gold:
        raise ValueError("predicted and gold insights must both be non-empty")
    pairs = [(g, p) for g in range(len(gold)) for p in range(len(predicted))]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        flat = list(pool.map(lambda gp: judge(gateway, predicted[gp[1]], gold[gp[0]]), pairs))
    ratings = [flat[g * len(predicted):(g + 1) * len(predicted)] for g in range(len(gold))]
    flags = [f"unparsable rating for gold {g} / predicted {p}" for (g, p), r in zip(pairs, flat) if r is None]
    per_gold, mean = recall_from_ratings(ratings)
    if degenerate_judge([r for r in flat if r is not None]):
        flags.append("degenerate judge: more than 90% of ratings share one value")
    return RecallResult(ratings, per_gold, mean, flags)


def summarize(gateway: Gateway, insights: Sequence[str]) -> str:
    if not insights:
        raise ValueError("at least one insight is required")
    text = gateway.complete_structured(
        "summary_prompt", {"insights": "\n".join(f"- {i}" for i in insights)}, schemas.TEXT
    )
    return " ".join(text.split())


def summary_score(gateway: Gateway, generated: str, reference: str) -> RecallResult:
    """Summary-level score: the recall machinery on a single (generated, reference) pair."""
    return insight_recall(gateway, [generated], [reference])


def degenerate_judge(ratings: Sequence[int], threshold: float = 0.9, min_count: int = 10) -> bool:
    if len(ratings) < min_count:
        return False
    _, top = Counter(ratings).most_common(1)[0]
    return top / len(ratings) > threshold


# ---- file formats ----------------------------------------------------------

@dataclass
class GoldSet:
    insights: list[str]
    summary: str | None = None


def load_gold(path: str | Path) -> GoldSet:
    """``[{"id", "text", "summary"?}]`` or ``{"insights": [...], "summary": "..."}``."""
    data = json.loads(Path(path).read_text())
    summary = None
    if isinstance(data, dict):
        summary = data.get("summary")
        data = data.get("insights", [])
    texts = []
    for item in data:
        if isinstance(item, str):
            texts.append(item)
        else:
            texts.append(item["text"])
            summary = summary or item.get("summary")
    return GoldSet([t for t in texts if t.strip()], summary)


def load_predicted(path: str | Path) -> list[str]:
    """A JSON list of strings/objects with "text", or a run's insight bank JSON."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("insights", [])
    return [d if isinstance(d, str) else d["text"] for d in data]


def load_race_scores(path: str | Path) -> dict[str, float]:
    """Numeric fields from an external RACE output file (JSON object or JSON lines, averaged)."""
    text = Path(path).read_text().strip()
    try:
        rows = [json.loads(text)]
    except json.JSONDecodeError:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    if rows and isinstance(rows[0], list):
        rows = rows[0]
    totals: dict[str, list[float]] = {}
    for row in rows:
        for key, value in row.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                totals.setdefault(key, []).append(float(value))
    return {k: sum(v) / len(v) for k, v in sorted(totals.items())}
