"""Domain types shared across exploration, reporting and evaluation.

All types are immutable pydantic models; "mutation" means building a new value
at a layer boundary. JSON round-trips via ``model_dump_json`` /
``model_validate_json``.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Destination(str, Enum):
    DATABASE = "database"
    INTERNET = "internet"


class Provenance(str, Enum):
    WARMSTART = "warmstart"
    DATABASE = "database"
    INTERNET = "internet"


def word_count(text: str) -> int:
    """Whitespace-delimited token count, used for every word cap."""
    return len(text.split())


class ExplorationQuestion(_Frozen):
    text: str
    destination: Destination

    @field_validator("text")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("question text must be non-empty")
        return v


class ColumnSummary(_Frozen):
    column: str
    distinct_pct: float
    top_values: tuple[tuple[str, int], ...] = ()
    # (min, max, median, mean) for numeric columns only
    numeric_stats: Optional[tuple[float, float, float, float]] = None

    @model_validator(mode="after")
    def _check(self) -> "ColumnSummary":
        if not 0.0 <= self.distinct_pct <= 1.0:
            raise ValueError("distinct_pct outside [0, 1]")
        counts = [c for _, c in self.top_values]
        if any(a < b for a, b in zip(counts, counts[1:])):
            raise ValueError("top_values not ordered by descending count")
        if len(self.top_values) > 5:
            raise ValueError("at most 5 top values")
        if self.numeric_stats is not None:
            lo, hi, med, mean = self.numeric_stats
            eps = 1e-9 * max(1.0, abs(lo), abs(hi))
            if not (lo <= med <= hi and lo - eps <= mean <= hi + eps):
                raise ValueError("numeric stats out of order")
        return self


class QueryRecord(_Frozen):
    id: str
    question: ExplorationQuestion
    sql: str = ""
    answer: str = ""
    summaries: tuple[ColumnSummary, ...] = ()
    revised_sql: Optional[str] = None
    revised_answer: Optional[str] = None
    follow_up: Optional[str] = None
    layer: int = Field(ge=1)
    answered: bool = True
    flags: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "QueryRecord":
        if (
            self.question.destination is Destination.DATABASE
            and self.answered
            and not self.sql.strip()
        ):
            raise ValueError("answered database record requires sql")
        if (self.follow_up is None) != (self.revised_sql is None):
            raise ValueError("follow_up present iff revised_sql present")
        return self

    @property
    def final_sql(self) -> str:
        return self.revised_sql or self.sql

    @property
    def final_answer(self) -> str:
        return self.revised_answer or self.answer


class Insight(_Frozen):
    id: str
    text: str
    provenance: Provenance
    evidence: tuple[str, ...] = ()
    layer_created: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "Insight":
        if not self.text.strip():
            raise ValueError("insight text must be non-empty")
        if self.provenance is Provenance.DATABASE and not self.evidence:
            raise ValueError("database insight requires evidence")
        return self


class InsightBank(_Frozen):
    insights: tuple[Insight, ...] = ()
    cap: int = Field(ge=1)

    @model_validator(mode="after")
    def _check(self) -> "InsightBank":
        if len(self.insights) > self.cap:
            raise ValueError(f"bank size {len(self.insights)} exceeds cap {self.cap}")
        ids = [i.id for i in self.insights]
        if len(ids) != len(set(ids)):
            raise ValueError("insight ids must be unique")
        return self

    def __len__(self) -> int:
        return len(self.insights)

    def get(self, insight_id: str) -> Insight | None:
        for insight in self.insights:
            if insight.id == insight_id:
                return insight
        return None


class Thesis(_Frozen):
    title: str
    research_strategy: str = ""
    version: int = Field(ge=1)
    layer_produced: int

    @field_validator("title")
    @classmethod
    def _short(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("thesis title must be non-empty")
        if word_count(v) > 10:
            raise ValueError("thesis title exceeds 10 words")
        return v


class CitationKind(str, Enum):
    INSIGHT = "insight"
    WEB = "web"


class CitationEntry(_Frozen):
    id: int = Field(ge=1)
    kind: CitationKind
    content: str
    origin: str


class SectionSpec(_Frozen):
    section_id: str
    heading: str
    purpose: str = ""
    must_include_evidence_ids: tuple[int, ...] = ()
    key_points: tuple[str, ...] = ()
    storytelling_moves: tuple[str, ...] = ()
    web_queries: tuple[str, ...] = ()


class ReportPlan(_Frozen):
    title: str = ""
    subtitle: str = ""
    editorial_angle: str = ""
    lede_strategy: str = ""
    key_findings: tuple[str, ...] = ()
    sections: tuple[SectionSpec, ...] = ()
    closing_strategy: str = ""


class SectionDraft(_Frozen):
    section_id: str
    heading: str
    body: str
    used_citations: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()


class Criticism(_Frozen):
    original_sentence: str
    note: str


class ExecutorStep(_Frozen):
    thought: str
    action: str
    observation: str


class ExecutorTranscript(_Frozen):
    question: str
    record_id: Optional[str] = None
    steps: tuple[ExecutorStep, ...] = ()
    final_sql: Optional[str] = None
    final_answer: Optional[str] = None
    stopped: bool = False

    @property
    def turns(self) -> int:
        return len(self.steps)


class LayerSnapshot(_Frozen):
    layer: int = Field(ge=1)
    questions: tuple[ExplorationQuestion, ...] = ()
    record_ids: tuple[str, ...] = ()
    bank_before: InsightBank
    bank_after: InsightBank
    thesis: Optional[Thesis] = None
    thesis_event: Optional[str] = None  # "make" | "refine" | None
    flags: tuple[str, ...] = ()


class WarmStartOutput(_Frozen):
    report: str
    insights: tuple[Insight, ...] = ()
    degraded: bool = False

    @model_validator(mode="after")
    def _check(self) -> "WarmStartOutput":
        if not self.degraded and not self.insights:
            raise ValueError("warm start produced no insights")
        for insight in self.insights:
            if insight.provenance is not Provenance.WARMSTART:
                raise ValueError("warm-start insights must have warmstart provenance")
        return self


class RunRecord(_Frozen):
    run_id: str
    topic: str
    config: dict[str, Any]
    warm_start: Optional[WarmStartOutput] = None
    banks: tuple[InsightBank, ...] = ()  # B_0 .. B_i
    layers: tuple[LayerSnapshot, ...] = ()
    theses: tuple[Thesis, ...] = ()
    records: tuple[QueryRecord, ...] = ()
    transcripts: tuple[ExecutorTranscript, ...] = ()
    report: Optional[str] = None
    aborted: Optional[str] = None

    @property
    def bank(self) -> InsightBank | None:
        return self.banks[-1] if self.banks else None

    @property
    def thesis(self) -> Thesis | None:
        return self.theses[-1] if self.theses else None

    def record(self, record_id: str) -> QueryRecord | None:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        return None
