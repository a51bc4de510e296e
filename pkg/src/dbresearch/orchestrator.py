"""Layered planner/executor exploration.

One layer: plan questions, answer them in parallel (database questions through
the executor, internet questions through search), optionally slice views for
inductive surfacing, run the consistency pass and its follow-ups, consolidate
into the capped insight bank, then make or refine the thesis on schedule.
The bank and thesis only change at the sequential barriers after the parallel
step, and the run is persisted after every barrier.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .config import ResearchConfig
from .data import Database, DatabaseError, SQLExecutionError, column_summaries, render_answer
from .executor import CodeRunner, Executor
from .llm import schemas
from .llm.gateway import Gateway, GatewayError, StructuredOutputError
from .models import (
    Destination,
    ExecutorTranscript,
    ExplorationQuestion,
    Insight,
    InsightBank,
    LayerSnapshot,
    Provenance,
    QueryRecord,
    RunRecord,
    Thesis,
    WarmStartOutput,
)
from .store import RunStore
from .web import (
    NullSearchBackend,
    SearchBackend,
    SearchError,
    SearchSummarizeWarmStart,
    WarmStartAdapter,
    internet_answer,
    warm_start,
)

logger = logging.getLogger(__name__)

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class SchedulePreconditionError(ValueError):
    pass


# ---- thesis schedule -------------------------------------------------------

def thesis_schedule(max_layers: int, interval: int) -> dict[int, str]:
    """Layer -> "make" | "refine" for the layers that have a thesis event."""
    events = {}
    for layer in range(interval, max_layers + 1, interval):
        events[layer] = "make" if layer == interval else "refine"
    return events


# ---- planner ---------------------------------------------------------------

def _bullets(lines: Iterable[str]) -> str:
    text = "\n".join(f"- {line}" for line in lines)
    return text or "(none)"


def initial_questions(
    gateway: Gateway, topic: str, r0: str, db_description: str, budget: int
) -> list[ExplorationQuestion]:
    if budget < 1:
        raise ValueError("budget must be ≥ 1")
    questions = gateway.complete_structured(
        "initial_questions",
        {"topic": topic, "db_description": db_description, "num_questions": budget,
         "article": r0.strip() or None},
        schemas.QUESTIONS,
    )
    return questions[:budget]


def layer_questions(
    gateway: Gateway,
    topic: str,
    bank: InsightBank,
    thesis: Thesis | None,
    db_description: str,
    asked: Sequence[str],
    budget: int,
) -> list[ExplorationQuestion]:
    if budget < 1:
        raise ValueError("budget must be ≥ 1")
    questions = gateway.complete_structured(
        "exploration_question_direct_gen",
        {
            "max_questions": budget,
            "db_description": db_description,
            "global_insights": _bullets(i.text for i in bank.insights),
            "dialogue_turns": _bullets(asked),
            "topic": topic,
            "thesis": thesis.title if thesis else None,
            "research_strategy": thesis.research_strategy if thesis else None,
        },
        schemas.QUESTIONS,
    )
    return questions[:budget]


def _history_text(records: Sequence[QueryRecord]) -> str:
    blocks = []
    for rec in records:
        if rec.final_sql:
            blocks.append(f"Q: {rec.question.text}\nSQL: {rec.final_sql}")
    return "\n\n".join(blocks) or "(none)"


def view_queries(
    gateway: Gateway,
    topic: str,
    history: Sequence[QueryRecord],
    db_description: str,
    database_type: str,
    budget: int,
) -> list[str]:
    """SELECT * slices chosen from prior findings; the SELECT-only rule gets one retry."""
    db_records = [r for r in history if r.question.destination is Destination.DATABASE and r.final_sql]
    if not db_records:
        raise ValueError("view queries need at least one prior database record")
    sqls = gateway.complete_structured(
        "exploration_direct_SQL_gen",
        {"max_questions": budget, "db_description": db_description,
         "dialogue_turns": _history_text(db_records), "topic": topic, "database_type": database_type},
        schemas.VIEW_QUERIES,
        retries=1,
    )
    return sqls[:budget]


# ---- consistency -----------------------------------------------------------

def sql_identifiers(sql: str) -> set[str]:
    stripped = re.sub(r"'(?:[^']|'')*'", "''", sql)
    return {m.lower() for m in _IDENT.findall(stripped)}


def lint_follow_up(follow_up: str, layer_sqls: Iterable[str], known_columns: Iterable[str]) -> bool:
    """True when the follow-up names no database column absent from this layer's SQL."""
    seen: set[str] = set()
    for sql in layer_sqls:
        seen |= sql_identifiers(sql)
    columns = {c.lower() for c in known_columns}
    mentioned = {m.lower() for m in _IDENT.findall(re.sub(r"'(?:[^']|'')*'", "''", follow_up))}
    return not ((mentioned & columns) - seen)


def consistency_input(records: Sequence[QueryRecord], examples: Sequence[QueryRecord]) -> tuple[str, dict[str, str]]:
    """Prompt payload plus the node-key -> record-id map for current records."""
    nodes: dict[str, dict] = {}
    for k, ex in enumerate(examples):
        nodes[f"example_node_{k}"] = {
            "query": ex.question.text, "SQL": ex.final_sql,
            "example_node": True, "note": "no need to generate follow_up_question",
        }
    keys = {}
    for k, rec in enumerate(records):
        nodes[f"query{k}"] = {"previous_queries": None, "query": rec.question.text, "SQL": rec.sql}
        keys[f"query{k}"] = rec.id
    return json.dumps(nodes, indent=4, ensure_ascii=False), keys


def consistency_pass(
    gateway: Gateway,
    records: Sequence[QueryRecord],
    examples: Sequence[QueryRecord] = (),
    known_columns: Iterable[str] = (),
) -> dict[str, str | None]:
    """Record id -> follow-up instruction (or None) for this layer's database records."""
    records = [r for r in records if r.question.destination is Destination.DATABASE and r.answered and r.sql]
    if not records:
        raise ValueError("consistency pass needs at least one database record")
    out: dict[str, str | None] = {r.id: None for r in records}
    if len(records) == 1 and not examples:
        return out
    payload, keys = consistency_input(records, examples)
    reply = gateway.complete_structured("query_consistency_module", {"input": payload}, schemas.CONSISTENCY)
    layer_sqls = [r.sql for r in records]
    known = list(known_columns)
    for key, follow in reply.items():
        rid = keys.get(key)
        if rid is None or follow is None:
            continue  # example nodes and unknown keys never receive follow-ups
        if known and not lint_follow_up(follow, layer_sqls, known):
            logger.info("dropping follow-up for %s: names a column absent from this layer", rid)
            continue
        out[rid] = follow
    return out


# ---- consolidation ---------------------------------------------------------

def consolidation_input(bank: InsightBank, records: Sequence[QueryRecord]) -> tuple[str, dict[str, QueryRecord]]:
    nodes: dict[str, dict] = {}
    for insight in bank.insights:
        nodes[insight.id] = {"insight": insight.text, "provenance": insight.provenance.value}
    new = {}
    for rec in records:
        key = f"new-{rec.id}"
        node = {"question": rec.question.text, "answer": rec.final_answer}
        if rec.question.destination is Destination.DATABASE:
            node["sql"] = rec.final_sql
        nodes[key] = node
        new[key] = rec
    return json.dumps(nodes, indent=2, ensure_ascii=False), new


def consolidate(
    gateway: Gateway,
    topic: str,
    db_description: str,
    bank: InsightBank,
    records: Sequence[QueryRecord],
    thesis: Thesis | None,
    layer: int,
) -> InsightBank:
    """Select up to ``bank.cap`` insights from the bank plus this layer's answers."""
    usable = [r for r in records if r.answered and r.final_answer.strip()]
    if not usable:
        return bank
    payload, new = consolidation_input(bank, usable)
    pairs = gateway.complete_structured(
        "insight_bank_filter",
        {"max_num_insights": bank.cap, "topic": topic, "db_description": db_description,
         "input": payload, "thesis": thesis.title if thesis else None},
        schemas.SELECTION,
    )
    chosen: list[Insight] = []
    seen: set[str] = set()
    for key, text in pairs:
        text = text.strip()
        if key in seen or not text:
            continue
        existing = bank.get(key)
        if existing is not None:
            insight = existing if existing.text == text else existing.model_copy(update={"text": text})
        elif key in new:
            rec = new[key]
            is_db = rec.question.destination is Destination.DATABASE
            insight = Insight(
                id=f"I-{rec.id}", text=text,
                provenance=Provenance.DATABASE if is_db else Provenance.INTERNET,
                evidence=(rec.id,) if is_db else (), layer_created=layer,
            )
        else:
            continue
        seen.add(key)
        chosen.append(insight)
        if len(chosen) == bank.cap:
            break
    if not chosen:
        raise StructuredOutputError("insight_bank_filter", "selection contained no known node ids")
    return InsightBank(insights=tuple(chosen), cap=bank.cap)


# ---- thesis ----------------------------------------------------------------

def _findings(bank: InsightBank) -> str:
    return _bullets(i.text for i in bank.insights)


def make_thesis(
    gateway: Gateway, topic: str, db_description: str, bank: InsightBank, layer: int, interval: int
) -> Thesis | None:
    """First (model-ranked) candidate; ``None`` when the model proposes none."""
    if layer != interval:
        raise SchedulePreconditionError(f"thesis is made at layer {interval}, not {layer}")
    candidates = gateway.complete_structured(
        "thesis_generation",
        {"db_description": db_description, "topic": topic, "context": _findings(bank)},
        schemas.THESES,
    )
    if not candidates:
        return None
    title, strategy = candidates[0]
    return Thesis(title=title.strip(), research_strategy=strategy, version=1, layer_produced=layer)


def refine_thesis(
    gateway: Gateway,
    topic: str,
    db_description: str,
    current: Thesis,
    bank: InsightBank,
    layer: int,
    interval: int,
) -> Thesis:
    if current is None:
        raise SchedulePreconditionError("no thesis to refine")
    if layer <= interval or layer % interval:
        raise SchedulePreconditionError(f"refinement happens at multiples of {interval} after the first")
    title, strategy, _decision = gateway.complete_structured(
        "thesis_refinement",
        {"db_description": db_description, "topic": topic, "current_thesis": current.title,
         "current_research_strategy": current.research_strategy, "context": _findings(bank)},
        schemas.REFINEMENT,
    )
    return Thesis(title=title.strip(), research_strategy=strategy or current.research_strategy,
                  version=current.version + 1, layer_produced=layer)


# ---- driver ----------------------------------------------------------------

def known_columns(database: Database) -> list[str]:
    session = database.session()
    try:
        details = session.table_details([n for n, _ in session.get_tables()])
    finally:
        session.close()
    return sorted({c.name for d in details for c in d.columns})


def run_id_for(topic: str, config: dict) -> str:
    blob = json.dumps([topic, config], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class Orchestrator:
    gateway: Gateway
    database: Database
    config: ResearchConfig
    search_backend: SearchBackend = field(default_factory=NullSearchBackend)
    warm_start_adapter: WarmStartAdapter | None = None
    store: RunStore | None = None
    db_description: str | None = None
    runner: CodeRunner | None = None
    on_event: Callable[[str, dict], None] | None = None

    def __post_init__(self):
        self.executor = Executor(self.gateway, self.database, self.config, runner=self.runner)
        if self.warm_start_adapter is None:
            self.warm_start_adapter = SearchSummarizeWarmStart(self.gateway, self.search_backend, self.config)

    def _emit(self, event: str, **data) -> None:
        logger.info("%s %s", event, data)
        if self.on_event is not None:
            self.on_event(event, data)

    def _save(self, record: RunRecord) -> RunRecord:
        if self.store is not None:
            self.store.save_run(record)
        return record

    def _abort(self, record: RunRecord, reason: str) -> RunRecord:
        self._emit("abort", reason=reason)
        return self._save(record.model_copy(update={"aborted": reason}))

    # ---- public ---------------------------------------------------------

    def run(self, topic: str, resume: bool = True) -> RunRecord:
        """Warm start, then layers 1..m. Aborts return a persisted partial record."""
        cfg = self.config.to_dict()
        record = None
        if resume and self.store is not None:
            record = self.store.load_run()
            if record is not None and (record.topic != topic or record.config != cfg):
                record = None
            elif record is not None:
                record = record.model_copy(update={"aborted": None})
                self._emit("resume", layers_completed=len(record.layers))
        if record is None:
            record = RunRecord(run_id=run_id_for(topic, cfg), topic=topic, config=cfg)

        if record.warm_start is None:
            try:
                ws = self._warm_start(topic)
            except (SearchError, DatabaseError, GatewayError) as exc:
                return self._abort(record, f"warm start: {exc}")
            bank0 = InsightBank(insights=ws.insights[: self.config.insight_cap], cap=self.config.insight_cap)
            record = self._save(record.model_copy(update={"warm_start": ws, "banks": (bank0,)}))
            self._emit("warm_start", insights=len(ws.insights), degraded=ws.degraded)

        try:
            self.database.ping()
            description = self.database.describe()
            if self.db_description:
                description = f"{self.db_description.strip()}\n\n{description}"
            columns = known_columns(self.database)
        except DatabaseError as exc:
            return self._abort(record, f"database unreachable: {exc}")

        schedule = thesis_schedule(self.config.max_layers, self.config.thesis_interval)
        for layer in range(len(record.layers) + 1, self.config.max_layers + 1):
            try:
                record = self._layer(record, layer, description, columns, schedule.get(layer))
            except DatabaseError as exc:
                return self._abort(record, f"layer {layer}: database unreachable: {exc}")
            except (SearchError, GatewayError) as exc:
                return self._abort(record, f"layer {layer}: {exc}")
            record = self._save(record)
        self._emit("done", layers=len(record.layers), bank=len(record.bank or ()))
        return record

    # ---- phases ---------------------------------------------------------

    def _warm_start(self, topic: str) -> WarmStartOutput:
        try:
            return warm_start(topic, self.warm_start_adapter)
        except StructuredOutputError as exc:
            logger.warning("warm start degraded: %s", exc)
            return WarmStartOutput(report=f"# {topic}\n", degraded=True)

    def _answer(self, question: ExplorationQuestion, rid: str, layer: int, topic: str):
        if question.destination is Destination.DATABASE:
            return self.executor.answer_question(question, record_id=rid, layer=layer)
        try:
            answer = internet_answer(self.gateway, question.text, topic, self.config, self.search_backend)
        except (StructuredOutputError, SearchError) as exc:
            answer, flag = None, f"unanswered: {exc}"
        else:
            flag = "unanswered: no web results"
        if answer is None:
            rec = QueryRecord(id=rid, question=question, layer=layer, answered=False, flags=(flag,))
        else:
            rec = QueryRecord(id=rid, question=question, answer=answer, layer=layer)
        return rec, None

    def _map(self, fn, items):
        items = list(items)
        if not items:
            return []
        with ThreadPoolExecutor(max_workers=self.config.max_workers) as pool:
            return list(pool.map(lambda args: fn(*args), items))

    def _layer(
        self, record: RunRecord, layer: int, description: str, columns: list[str], event: str | None
    ) -> RunRecord:
        cfg = self.config
        bank_before = record.bank
        thesis = record.thesis
        flags: list[str] = []
        self._emit("layer_start", layer=layer, bank=len(bank_before), thesis=thesis.title if thesis else None)

        # planner
        try:
            if layer == 1:
                questions = initial_questions(self.gateway, record.topic, record.warm_start.report,
                                              description, cfg.first_layer_questions)
            else:
                asked = [r.question.text for r in record.records]
                questions = layer_questions(self.gateway, record.topic, bank_before, thesis,
                                            description, asked, cfg.per_layer_questions)
        except StructuredOutputError as exc:
            questions = []
            flags.append(f"planner failed: {exc}")

        # parallel execution
        outcomes = self._map(
            lambda q, rid: self._answer(q, rid, layer, record.topic),
            [(q, f"L{layer}Q{j}") for j, q in enumerate(questions, 1)],
        )
        records = [rec for rec, _ in outcomes]
        transcripts: list[ExecutorTranscript] = [t for _, t in outcomes if t is not None]

        # view-query channel
        views: list[QueryRecord] = []
        if cfg.view_queries:
            views, view_flags = self._views(record, records, layer, description)
            flags += view_flags

        # consistency barrier
        db_records = [r for r in records if r.question.destination is Destination.DATABASE and r.answered]
        if db_records:
            examples = self._bank_examples(record, bank_before)
            try:
                follow_ups = consistency_pass(self.gateway, db_records, examples, columns)
            except StructuredOutputError as exc:
                follow_ups = {}
                flags.append(f"consistency pass skipped: {exc}")
                records = [r.model_copy(update={"flags": r.flags + ("consistency pass skipped",)})
                           if r in db_records else r for r in records]
            todo = [(next(r for r in records if r.id == rid), text)
                    for rid, text in follow_ups.items() if text]
            revised = self._map(self.executor.apply_follow_up, todo)
            by_id = {rec.id: rec for rec, _ in revised}
            records = [by_id.get(r.id, r) for r in records]
            transcripts += [t for _, t in revised]
            self._emit("consistency", layer=layer, follow_ups=len(todo))

        # consolidation barrier
        try:
            bank_after = consolidate(self.gateway, record.topic, description, bank_before,
                                     records + views, thesis, layer)
        except StructuredOutputError as exc:
            bank_after = bank_before
            flags.append(f"consolidation skipped: {exc}")

        # thesis barrier
        theses = record.theses
        new_thesis = thesis
        try:
            if event == "make":
                new_thesis = make_thesis(self.gateway, record.topic, description, bank_after,
                                         layer, cfg.thesis_interval)
                if new_thesis is None:
                    flags.append("thesis generation produced no candidates")
            elif event == "refine" and thesis is not None:
                new_thesis = refine_thesis(self.gateway, record.topic, description, thesis,
                                           bank_after, layer, cfg.thesis_interval)
            elif event == "refine":
                flags.append("no thesis to refine")
        except StructuredOutputError as exc:
            flags.append(f"thesis {event} failed: {exc}")
            new_thesis = thesis
        if new_thesis is not None and new_thesis is not thesis:
            theses = theses + (new_thesis,)

        snapshot = LayerSnapshot(
            layer=layer,
            questions=tuple(questions),
            record_ids=tuple(r.id for r in records + views),
            bank_before=bank_before,
            bank_after=bank_after,
            thesis=new_thesis,
            thesis_event=event,
            flags=tuple(flags),
        )
        self._emit("layer_done", layer=layer, bank=len(bank_after), records=len(records),
                   thesis_event=snapshot.thesis_event)
        return record.model_copy(update={
            "banks": record.banks + (bank_after,),
            "layers": record.layers + (snapshot,),
            "theses": theses,
            "records": record.records + tuple(records) + tuple(views),
            "transcripts": record.transcripts + tuple(transcripts),
        })

    def _bank_examples(self, record: RunRecord, bank: InsightBank, limit: int = 5) -> list[QueryRecord]:
        out, seen = [], set()
        for insight in bank.insights:
            for rid in insight.evidence:
                rec = record.record(rid)
                if rec is not None and rec.final_sql and rid not in seen:
                    seen.add(rid)
                    out.append(rec)
        return out[:limit]

    def _views(
        self, record: RunRecord, current: list[QueryRecord], layer: int, description: str
    ) -> tuple[list[QueryRecord], list[str]]:
        history = list(record.records) + current
        session = self.database.session()
        try:
            try:
                sqls = view_queries(self.gateway, record.topic, history, description,
                                    session.database_type, self.config.view_query_budget)
            except ValueError as exc:
                return [], [f"view queries skipped: {exc}"]
            except StructuredOutputError as exc:
                return [], [f"view queries rejected: {exc}"]
            out, flags = [], []
            for k, sql in enumerate(sqls, 1):
                try:
                    result = session.execute_sql(sql)
                except SQLExecutionError as exc:
                    flags.append(f"view query failed: {exc}")
                    continue
                summaries = column_summaries(result)
                out.append(QueryRecord(
                    id=f"L{layer}V{k}",
                    question=ExplorationQuestion(text=f"Summary statistics for the view: {sql}",
                                                 destination=Destination.DATABASE),
                    sql=sql, answer=render_answer(result, summaries), summaries=tuple(summaries),
                    layer=layer, flags=("view query",),
                ))
            return out, flags
        finally:
            session.close()


def run_research(
    topic: str,
    config: ResearchConfig,
    gateway: Gateway,
    database: Database,
    search_backend: SearchBackend | None = None,
    **kwargs,
) -> RunRecord:
    orchestrator = Orchestrator(gateway, database, config,
                                search_backend=search_backend or NullSearchBackend(), **kwargs)
    return orchestrator.run(topic)
