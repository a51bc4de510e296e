"""Five-stage report pipeline.

A: plan an outline over a citation registry built from the insight bank.
B: draft each section from its evidence packet (bank entries plus web results).
C: chunk each draft at citation boundaries and check every chunk for entailment.
D: revise only the criticised sentences.
E: polish the assembled draft, then append the sources list programmatically.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from pydantic import BaseModel, ValidationError

from .config import ResearchConfig
from .llm import schemas
from .llm.gateway import Gateway, StructuredOutputError
from .llm.schemas import Schema, SchemaViolation, load_json
from .models import (
    CitationEntry,
    CitationKind,
    Criticism,
    InsightBank,
    ReportPlan,
    RunRecord,
    SectionDraft,
    SectionSpec,
    Thesis,
    word_count,
)
from .store import RunStore
from .web import SearchBackend, SearchError, search

logger = logging.getLogger(__name__)

MAX_WEB_QUERIES = 3
WEB_RESULTS_PER_QUERY = 3
CONTEXT_SENTENCES = 2
NO_THESIS = "(none)"

_MARKER = re.compile(r"\[(\d+)\]")
_MARKER_GROUP = re.compile(r"(?:\s*\[\d+(?:\s*,\s*\d+)*\])+")
_SOURCES_HEADING = re.compile(r"^#+\s*(sources|references|citations)\b", re.IGNORECASE | re.MULTILINE)
_CONCLUSION_HEADING = re.compile(r"^#+\s*(conclusion|concluding|in conclusion)", re.IGNORECASE | re.MULTILINE)
ABBREVIATIONS = frozenset(
    "e.g i.e etc vs mr mrs ms dr prof st no approx est jan feb mar apr jun jul aug sep sept oct nov dec "
    "u.s u.k u.n inc ltd co corp fig al".split()
)


def cited_ids(text: str) -> list[int]:
    """Citation ids in order of first appearance (``[2, 3]`` groups included)."""
    out: list[int] = []
    for group in re.findall(r"\[(\d+(?:\s*,\s*\d+)*)\]", text):
        for n in group.split(","):
            i = int(n)
            if i not in out:
                out.append(i)
    return out


# ---- registry --------------------------------------------------------------

class CitationRegistry:
    """Dense 1..N citation ids for one report run."""

    def __init__(self, entries: Iterable[CitationEntry] = ()):
        self._entries: list[CitationEntry] = list(entries)
        self._by_origin: dict[tuple[str, str], int] = {(e.kind.value, e.origin): e.id for e in self._entries}
        self._lock = threading.Lock()

    @classmethod
    def from_bank(cls, bank: InsightBank) -> "CitationRegistry":
        reg = cls()
        for insight in bank.insights:
            reg.add(CitationKind.INSIGHT, insight.text, insight.id)
        return reg

    def add(self, kind: CitationKind, content: str, origin: str) -> int:
        with self._lock:
            key = (kind.value, origin)
            if key in self._by_origin:
                return self._by_origin[key]
            entry = CitationEntry(id=len(self._entries) + 1, kind=kind, content=content, origin=origin)
            self._entries.append(entry)
            self._by_origin[key] = entry.id
            return entry.id

    def get(self, cid: int) -> CitationEntry | None:
        return self._entries[cid - 1] if 1 <= cid <= len(self._entries) else None

    def __contains__(self, cid: object) -> bool:
        return isinstance(cid, int) and self.get(cid) is not None

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[CitationEntry, ...]:
        return tuple(self._entries)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self._entries]


# ---- Stage A: plan ---------------------------------------------------------

class _SectionOut(BaseModel):
    section_id: str
    heading: str
    purpose: str = ""
    must_include_evidence_ids: list[int] = []
    key_points: list[str] = []
    storytelling_moves: list[str] = []
    web_queries: list[str] = []


class _PlanOut(BaseModel):
    lede_strategy: str = ""
    key_findings: list[str] = []
    sections: list[_SectionOut]
    closing_strategy: str = ""


def _plan_schema(valid_ids: set[int]) -> Schema:
    attempts = {"n": 0}

    def parse(text: str) -> _PlanOut:
        attempts["n"] += 1
        try:
            out = _PlanOut.model_validate(load_json(text))
        except ValidationError as exc:
            raise SchemaViolation(schemas.short_error(exc)) from None
        if not out.sections:
            raise SchemaViolation("sections: at least one section required")
        seen = set()
        for sec in out.sections:
            if sec.section_id in seen:
                raise SchemaViolation(f"duplicate section_id {sec.section_id}")
            seen.add(sec.section_id)
            bad = sorted(set(sec.must_include_evidence_ids) - valid_ids)
            if bad:
                raise SchemaViolation(
                    f"{sec.section_id}.must_include_evidence_ids uses invalid ids {bad}; "
                    "use only VALID EVIDENCE IDS"
                )
            if len(sec.web_queries) > MAX_WEB_QUERIES:
                if attempts["n"] == 1:
                    raise SchemaViolation(f"{sec.section_id}.web_queries: at most {MAX_WEB_QUERIES} queries")
                sec.web_queries = sec.web_queries[:MAX_WEB_QUERIES]
        return out

    return Schema("report_plan", parse)


def note_digest(registry: CitationRegistry) -> str:
    return "\n".join(f"[{e.id}] {e.content}" for e in registry.entries if e.kind is CitationKind.INSIGHT)


def plan(
    gateway: Gateway, topic: str, thesis: Thesis | None, bank: InsightBank, r0: str = ""
) -> tuple[ReportPlan, CitationRegistry]:
    if not bank.insights:
        raise ValueError("cannot plan a report from an empty insight bank")
    registry = CitationRegistry.from_bank(bank)
    thesis_text = thesis.title if thesis else NO_THESIS
    digest = note_digest(registry)
    package = gateway.complete_structured(
        "title_package", {"topic": topic, "thesis": thesis_text, "note_digest": digest},
        schemas.TITLE_PACKAGE,
    )
    out = gateway.complete_structured(
        "outline_gen",
        {"topic": topic, "thesis": thesis_text, "title": package.title, "subtitle": package.subtitle,
         "editorial_angle": package.editorial_angle, "note_digest": digest,
         "warmstart_text": r0.strip() or "(none)", "valid_ids": ", ".join(map(str, registry.ids))},
        _plan_schema(set(registry.ids)),
        retries=1,
    )
    report_plan = ReportPlan(
        title=package.title, subtitle=package.subtitle, editorial_angle=package.editorial_angle,
        lede_strategy=out.lede_strategy, key_findings=tuple(out.key_findings),
        sections=tuple(
            SectionSpec(
                section_id=s.section_id, heading=s.heading, purpose=s.purpose,
                must_include_evidence_ids=tuple(dict.fromkeys(s.must_include_evidence_ids)),
                key_points=tuple(s.key_points), storytelling_moves=tuple(s.storytelling_moves),
                web_queries=tuple(s.web_queries),
            )
            for s in out.sections
        ),
        closing_strategy=out.closing_strategy,
    )
    return report_plan, registry


# ---- web context and packets -----------------------------------------------

def gather_web_context(
    report_plan: ReportPlan,
    registry: CitationRegistry,
    config: ResearchConfig,
    backend: SearchBackend,
    max_workers: int = 4,
) -> dict[str, list[int]]:
    """Run each section's web queries; new ids continue the registry sequence."""
    jobs = [(s.section_id, q) for s in report_plan.sections for q in s.web_queries if q.strip()]

    def run(job):
        try:
            return search(job[1], config, backend)[:WEB_RESULTS_PER_QUERY]
        except SearchError as exc:
            logger.warning("web query %r failed: %s", job[1], exc)
            return []

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(run, jobs))
    out: dict[str, list[int]] = {s.section_id: [] for s in report_plan.sections}
    for (section_id, _), hits in zip(jobs, results):  # ids assigned in plan order
        for r in hits:
            content = f"{r.title}: {r.snippet}".strip(": ") if r.title else r.snippet
            cid = registry.add(CitationKind.WEB, content or r.url, r.url)
            if cid not in out[section_id]:
                out[section_id].append(cid)
    return out


@dataclass(frozen=True)
class EvidencePacket:
    section_id: str
    core: tuple[CitationEntry, ...]
    web: tuple[CitationEntry, ...] = ()

    @property
    def allowed(self) -> list[int]:
        return [e.id for e in self.core + self.web]

    def render_core(self) -> str:
        return "\n".join(f"[{e.id}] {e.content}" for e in self.core) or "(none)"

    def render_web(self) -> str:
        return "\n".join(f"[{e.id}] {e.content}\n    source: {e.origin}" for e in self.web) or "(none)"


def build_packet(spec: SectionSpec, registry: CitationRegistry, web_ids: Sequence[int] = ()) -> EvidencePacket:
    core = tuple(registry.get(i) for i in spec.must_include_evidence_ids)
    if any(e is None for e in core):
        raise ValueError(f"{spec.section_id}: evidence id outside the registry")
    return EvidencePacket(spec.section_id, core, tuple(registry.get(i) for i in web_ids))


# ---- Stage B: draft --------------------------------------------------------

class _DraftOut(BaseModel):
    section_id: str = ""
    heading: str = ""
    section_markdown: str
    used_citations: list[int] = []


def _draft_schema(spec: SectionSpec, allowed: set[int], target_words: int) -> Schema:
    def parse(text: str) -> SectionDraft:
        try:
            out = _DraftOut.model_validate(load_json(text))
        except ValidationError as exc:
            raise SchemaViolation(schemas.short_error(exc)) from None
        body = out.section_markdown.strip()
        if not body:
            raise SchemaViolation("section_markdown must be non-empty")
        bad = [i for i in cited_ids(body) if i not in allowed]
        if bad:
            raise SchemaViolation(f"citations {bad} are not in ALLOWED_CITATIONS {sorted(allowed)}")
        if _SOURCES_HEADING.search(body):
            raise SchemaViolation("do not add a Sources/References section")
        n = word_count(body)
        if n > target_words:
            raise SchemaViolation(f"section has {n} words; the hard ceiling is {target_words}")
        return SectionDraft(section_id=spec.section_id, heading=spec.heading, body=body,
                            used_citations=tuple(sorted(cited_ids(body))))

    return Schema("section_draft", parse)


def _section_bindings(
    topic: str, thesis: Thesis | None, report_plan: ReportPlan, spec: SectionSpec, packet: EvidencePacket
) -> dict[str, Any]:
    return {
        "topic": topic,
        "thesis": thesis.title if thesis else NO_THESIS,
        "report_title": report_plan.title or topic,
        "section_id": spec.section_id,
        "heading": spec.heading,
        "purpose": spec.purpose,
        "key_points": "; ".join(spec.key_points) or "-",
        "storytelling_moves": "; ".join(spec.storytelling_moves) or "-",
        "allowed": ", ".join(map(str, packet.allowed)),
        "core_packet": packet.render_core(),
        "web_packet": packet.render_web(),
    }


def draft_section(
    gateway: Gateway,
    topic: str,
    thesis: Thesis | None,
    report_plan: ReportPlan,
    spec: SectionSpec,
    packet: EvidencePacket,
    target_words: int,
) -> SectionDraft:
    bindings = _section_bindings(topic, thesis, report_plan, spec, packet)
    bindings["target_words"] = target_words
    return gateway.complete_structured(
        "section_draft", bindings, _draft_schema(spec, set(packet.allowed), target_words), retries=1
    )


# ---- Stage C: chunk and check ----------------------------------------------

_BOUNDARY = re.compile(r"[.!?][\"')\]]*(?=\s)")


def _is_abbreviation(text: str, dot: int) -> bool:
    if text[dot] != ".":
        return False
    m = re.search(r"([A-Za-z][A-Za-z.]*)$", text[:dot])
    if not m:
        return False
    word = m.group(1).lower()
    return word in ABBREVIATIONS or len(word) == 1


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) spans of sentences; trailing citation markers stay with their sentence."""
    spans: list[tuple[int, int]] = []
    for para in re.finditer(r"[^\n]+(?:\n(?!\s*\n)[^\n]+)*", text):
        start, end = para.start(), para.end()
        pos = start
        while pos < end:
            while pos < end and text[pos].isspace():
                pos += 1
            if pos >= end:
                break
            cut = end
            for m in _BOUNDARY.finditer(text, pos, end):
                stop = m.end()
                group = _MARKER_GROUP.match(text, stop, end)
                if group:
                    stop = group.end()
                nxt = stop
                while nxt < end and text[nxt].isspace():
                    nxt += 1
                if nxt >= end:
                    cut = stop
                    break
                if _is_abbreviation(text, m.start()) or not (text[nxt].isupper() or text[nxt] in "\"'(“‘" or text[nxt].isdigit()):
                    continue
                cut = stop
                break
            spans.append((pos, cut))
            pos = cut
    return spans


def split_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]


@dataclass(frozen=True)
class Chunk:
    start: int
    end: int
    text: str
    sentence: str
    context: str
    ids: tuple[int, ...]

    @property
    def claim(self) -> str:
        return self.text.strip().lstrip(",;:—- ").strip()


def chunk_at_citations(body: str) -> list[Chunk]:
    """One chunk per citation-marker group: the span since the previous group
    (clipped to the current sentence) through the group itself."""
    spans = sentence_spans(body)
    chunks: list[Chunk] = []
    prev_end = 0
    for m in _MARKER_GROUP.finditer(body):
        ids = tuple(int(x) for x in re.findall(r"\d+", m.group(0)))
        anchor = body.index("[", m.start())  # the group may begin with whitespace outside any sentence
        k = next((i for i, (a, b) in enumerate(spans) if a <= anchor < b), None)
        if k is None:
            continue
        s_start, s_end = spans[k]
        start = max(prev_end, s_start)
        context = " ".join(body[a:b] for a, b in spans[max(0, k - CONTEXT_SENTENCES):k])
        chunks.append(Chunk(start, m.end(), body[start:m.end()], body[s_start:s_end], context, ids))
        prev_end = m.end()
    return chunks


def _grounding_call(gateway: Gateway, chunk: Chunk, registry: CitationRegistry) -> Criticism | None:
    missing = [i for i in chunk.ids if i not in registry]
    if missing:
        return Criticism(original_sentence=chunk.sentence, note=f"citation [{missing[0]}] has no source")
    sources = "\n\n".join(f"[{i}] {registry.get(i).content}" for i in chunk.ids)
    prefix = chunk.sentence[: max(0, chunk.sentence.find(chunk.claim))].strip()
    context = " ".join(p for p in (chunk.context, prefix) if p) or None
    verdict = gateway.complete_structured(
        "citation_grounding", {"sentence": chunk.claim, "sources": sources, "context": context},
        schemas.GROUNDING,
    )
    if verdict.is_entailed:
        return None
    return Criticism(original_sentence=chunk.sentence, note=verdict.issue.strip() or "claim not supported by the cited source")


def fact_check(gateway: Gateway, draft: SectionDraft, registry: CitationRegistry, max_workers: int = 4) -> list[Criticism]:
    chunks = chunk_at_citations(draft.body)
    if not chunks:
        return []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        verdicts = list(pool.map(lambda c: _grounding_call(gateway, c, registry), chunks))
    merged: dict[str, list[str]] = {}
    for crit in verdicts:
        if crit is not None:
            merged.setdefault(crit.original_sentence, []).append(crit.note)
    return [Criticism(original_sentence=s, note=" ".join(dict.fromkeys(notes))) for s, notes in merged.items()]


# ---- Stage D: revise -------------------------------------------------------

def minimal_edit_ok(original: str, revised: str, criticized: Iterable[str]) -> bool:
    """Uncriticised sentences survive verbatim, as a multiset; criticised ones do not."""
    criticized = {c.strip() for c in criticized}
    before = [s.strip() for s in split_sentences(original)]
    kept = Counter(s for s in before if s not in criticized)
    after = [s.strip() for s in split_sentences(revised)]
    survivors = Counter(s for s in after if s in kept)
    return survivors == kept and not any(s in criticized for s in after)


def format_criticisms(criticisms: Sequence[Criticism]) -> str:
    return "\n".join(f"- SENTENCE: {c.original_sentence}\n  ISSUE: {c.note}" for c in criticisms)


def revise_section(
    gateway: Gateway,
    topic: str,
    thesis: Thesis | None,
    report_plan: ReportPlan,
    spec: SectionSpec,
    packet: EvidencePacket,
    draft: SectionDraft,
    criticisms: Sequence[Criticism],
    registry: CitationRegistry,
    max_workers: int = 4,
) -> SectionDraft:
    if not criticisms:
        return draft
    for c in criticisms:
        if c.original_sentence not in draft.body:
            raise ValueError(f"criticized sentence not found in draft: {c.original_sentence!r}")
    bindings = _section_bindings(topic, thesis, report_plan, spec, packet)
    bindings["previous_draft"] = draft.body
    schema = _draft_schema(spec, set(packet.allowed), 10 ** 9)
    pending = list(criticisms)
    for attempt in range(2):
        bindings["criticisms"] = format_criticisms(pending)
        try:
            revised = gateway.complete_structured("section_revision", bindings, schema, retries=1)
        except StructuredOutputError as exc:
            logger.warning("%s: revision output invalid: %s", spec.section_id, exc)
            continue
        if not minimal_edit_ok(draft.body, revised.body, (c.original_sentence for c in criticisms)):
            logger.info("%s: revision touched uncriticized text (attempt %d)", spec.section_id, attempt + 1)
            continue
        remaining = fact_check(gateway, revised, registry, max_workers)
        if not remaining:
            return revised
        logger.info("%s: %d criticisms remain after revision", spec.section_id, len(remaining))
    notes = tuple(f"unresolved: {c.original_sentence} ({c.note})" for c in criticisms)
    return draft.model_copy(update={"flags": draft.flags + notes})


# ---- Stage E: polish -------------------------------------------------------

@dataclass
class FinalReport:
    markdown: str
    body: str
    citations: list[CitationEntry]
    id_map: dict[int, int] = field(default_factory=dict)  # original id -> final id

    @property
    def word_count(self) -> int:
        return word_count(self.body)

    def citations_json(self) -> str:
        inverse = {v: k for k, v in self.id_map.items()}
        rows = [{**c.model_dump(mode="json"), "registry_id": inverse.get(c.id, c.id)} for c in self.citations]
        return json.dumps(rows, indent=2, ensure_ascii=False) + "\n"


def assemble(drafts: Sequence[SectionDraft]) -> str:
    return "\n\n".join(f"## {d.heading}\n\n{d.body}" for d in drafts if d.body.strip())


def _polish_schema(allowed: set[int], word_cap: int) -> Schema:
    def parse(text: str) -> str:
        body = schemas.POLISH.parse(text).report_markdown.strip()
        if not body:
            raise SchemaViolation("report_markdown must be non-empty")
        if _SOURCES_HEADING.search(body):
            raise SchemaViolation("do not add a Sources/References section; it is appended programmatically")
        bad = [i for i in cited_ids(body) if i not in allowed]
        if bad:
            raise SchemaViolation(f"citations {bad} are not in ALLOWED_CITATIONS")
        n = word_count(body)
        if n > word_cap:
            raise SchemaViolation(f"report has {n} words; it must not exceed {word_cap} words")
        if not _CONCLUSION_HEADING.search(body):
            raise SchemaViolation("include a conclusion section at the end")
        return body

    return Schema("polish", parse)


def renumber(body: str, order: Sequence[int]) -> tuple[str, dict[int, int]]:
    """Rewrite markers so cited ids become 1..K in first-appearance order."""
    mapping = {old: new for new, old in enumerate(order, 1)}

    def sub(m: re.Match) -> str:
        ids = [mapping[int(x)] for x in re.split(r"\s*,\s*", m.group(1))]
        return "[" + ", ".join(map(str, ids)) + "]"

    return re.sub(r"\[(\d+(?:\s*,\s*\d+)*)\]", sub, body), mapping


def sources_appendix(entries: Sequence[CitationEntry]) -> str:
    lines = ["## Sources", ""]
    for e in sorted(entries, key=lambda e: e.id):
        snippet = " ".join(e.content.split())[:200]
        lines.append(f"[{e.id}] {e.kind.value} — {e.origin} — {snippet}")
    return "\n".join(lines) + "\n"


def polish(
    gateway: Gateway,
    topic: str,
    thesis: Thesis | None,
    report_plan: ReportPlan,
    drafts: Sequence[SectionDraft],
    registry: CitationRegistry,
    word_cap: int,
    renumber_citations: bool = True,
) -> FinalReport:
    allowed = sorted({i for d in drafts for i in d.used_citations})
    body = gateway.complete_structured(
        "final_polish",
        {"target_total_words": word_cap, "topic": topic, "thesis": thesis.title if thesis else NO_THESIS,
         "title": report_plan.title or topic, "subtitle": report_plan.subtitle,
         "plan_json": report_plan.model_dump_json(indent=1), "allowed_citations": ", ".join(map(str, allowed)),
         "draft_markdown": assemble(drafts)},
        _polish_schema(set(allowed), word_cap),
        retries=1,
    )
    order = cited_ids(body)
    if renumber_citations:
        body, mapping = renumber(body, order)
        entries = [registry.get(old).model_copy(update={"id": new}) for old, new in mapping.items()]
    else:
        mapping = {i: i for i in order}
        entries = [registry.get(i) for i in order]
    markdown = body.rstrip() + "\n\n" + sources_appendix(entries)
    return FinalReport(markdown=markdown, body=body, citations=sorted(entries, key=lambda e: e.id), id_map=mapping)


# ---- driver ----------------------------------------------------------------

@dataclass
class SectionResult:
    spec: SectionSpec
    packet: EvidencePacket
    draft: SectionDraft
    criticisms: list[Criticism]
    revised: SectionDraft


def generate_report(
    record: RunRecord,
    gateway: Gateway,
    config: ResearchConfig,
    backend: SearchBackend,
    store: RunStore | None = None,
) -> FinalReport:
    """Stages A-E over a finished exploration run."""
    bank, thesis = record.bank, record.thesis
    if bank is None or not bank.insights:
        raise ValueError("exploration produced no insights to report on")
    r0 = record.warm_start.report if record.warm_start else ""
    report_plan, registry = plan(gateway, record.topic, thesis, bank, r0)
    web = gather_web_context(report_plan, registry, config, backend, config.max_workers)
    if store is not None:
        store.write_json("report/plan.json", report_plan)
        store.write_json("report/registry.json", list(registry.entries))

    def section(spec: SectionSpec) -> SectionResult:
        packet = build_packet(spec, registry, web.get(spec.section_id, ()))
        draft = draft_section(gateway, record.topic, thesis, report_plan, spec, packet, config.section_word_cap)
        criticisms = fact_check(gateway, draft, registry, config.max_workers)
        revised = revise_section(gateway, record.topic, thesis, report_plan, spec, packet, draft,
                                 criticisms, registry, config.max_workers)
        return SectionResult(spec, packet, draft, criticisms, revised)

    specs = [s for s in report_plan.sections if s.must_include_evidence_ids or web.get(s.section_id)]
    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        results = list(pool.map(section, specs))
    if store is not None:
        for r in results:
            base = f"report/sections/{r.spec.section_id}"
            store.write_json(f"{base}/draft.json", r.draft)
            store.write_json(f"{base}/criticisms.json", r.criticisms)
            store.write_json(f"{base}/revised.json", r.revised)
    final = polish(gateway, record.topic, thesis, report_plan, [r.revised for r in results], registry,
                   config.report_word_cap, config.renumber_citations)
    if store is not None:
        store.write_json("report/polished.json", {"body": final.body})
    return final
