"""ReAct-style SQL executor.

The model emits one ``Thought``/``Action`` pair per turn; the action is run and
its observation appended to the next prompt. ``stop()`` designates the most
recently executed SQL as the answer. The loop is bounded by
``ResearchConfig.executor_turn_cap``.
"""

from __future__ import annotations

import ast
import datetime as dt
import json
import logging
import re
import subprocess
import sys
from dataclasses import dataclass
from typing import Any, Protocol, Sequence

from .config import ResearchConfig
from .data import (
    Database,
    DataAdapter,
    SQLExecutionError,
    TableResult,
    UnknownTableError,
    column_summaries,
    render_answer,
)
from .llm.gateway import Gateway
from .models import (
    Destination,
    ExecutorStep,
    ExecutorTranscript,
    ExplorationQuestion,
    QueryRecord,
)

logger = logging.getLogger(__name__)

ACTION_ARITY = {
    "get_tables": 0,
    "retrieve_tables_details": 1,
    "execute_sql": 1,
    "execute_python_from_sql": 2,
    "stop": 0,
}
_ACTION_CALL = re.compile(r"\b(" + "|".join(ACTION_ARITY) + r")\s*\(")
_OBSERVATION_CAP = 4000
POST_PROCESSING_UNAVAILABLE = "post-processing unavailable"


class ActionParseError(ValueError):
    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason  # unparsable | unknown_action | arity | multiple


@dataclass(frozen=True)
class Action:
    kind: str
    args: tuple[Any, ...] = ()
    thought: str = ""

    def render(self) -> str:
        return f"{self.kind}({', '.join(json.dumps(a) for a in self.args)})"


def _balanced(text: str, open_idx: int) -> int | None:
    """Index of the parenthesis closing ``text[open_idx]``, honouring quotes."""
    depth, i, quote = 0, open_idx, None
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 2
                continue
            if text.startswith(quote, i):
                i += len(quote)
                quote = None
                continue
        elif text.startswith('"""', i) or text.startswith("'''", i):
            quote = text[i : i + 3]
            i += 3
            continue
        elif ch in "'\"":
            quote = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return None


def parse_action(text: Any) -> Action:
    """Extract exactly one action from model output.

    Raises ActionParseError (never anything else) for unparsable text, unknown
    action names, wrong arity, or more than one action.
    """
    if not isinstance(text, str) or not text.strip():
        raise ActionParseError("unparsable", "empty model output")
    try:
        return _parse_action(text)
    except ActionParseError:
        raise
    except Exception as exc:  # defensive: parser must be total
        raise ActionParseError("unparsable", f"could not parse action: {exc}") from None


def _parse_action(text: str) -> Action:
    markers = list(re.finditer(r"Action\s*:", text))
    if len(markers) > 1:
        raise ActionParseError("multiple", "exactly one Action per turn is allowed")
    if markers:
        thought = text[: markers[0].start()]
        body = text[markers[0].end():]
    else:
        thought, body = "", text
    thought = re.sub(r"^\s*Thought\s*:\s*", "", thought).strip()
    body = body.strip().strip("`").strip()
    if body.startswith(("python", "sql")) and "\n" in body[:10]:
        body = body.split("\n", 1)[1]
    m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\(", body)
    if not m:
        raise ActionParseError("unparsable", "no action call found; expected e.g. Action: get_tables()")
    name = m.group(1)
    if name not in ACTION_ARITY:
        raise ActionParseError("unknown_action", f"unknown action: {name}")
    open_idx = m.end() - 1
    close_idx = _balanced(body, open_idx)
    if close_idx is None:
        raise ActionParseError("unparsable", f"unbalanced parentheses in {name}(...)")
    inner = body[open_idx + 1 : close_idx]
    rest = body[close_idx + 1 :]
    if _ACTION_CALL.search(rest):
        raise ActionParseError("multiple", "exactly one Action per turn is allowed")
    args = _parse_args(name, inner)
    return Action(name, args, thought)


def _parse_args(name: str, inner: str) -> tuple[Any, ...]:
    arity = ACTION_ARITY[name]
    if not inner.strip():
        args: tuple[Any, ...] = ()
    else:
        try:
            args = ast.literal_eval(f"({inner},)")
        except (ValueError, SyntaxError, MemoryError, RecursionError):
            if name == "execute_sql":
                args = (inner.strip(),)  # unquoted SQL
            else:
                raise ActionParseError("unparsable", f"could not parse arguments of {name}") from None
    if name == "execute_python_from_sql" and len(args) == 1 and isinstance(args[0], (tuple, list)):
        args = tuple(args[0])
    if name == "retrieve_tables_details" and len(args) == 1 and isinstance(args[0], str):
        args = ([args[0]],)
    if len(args) != arity:
        raise ActionParseError("arity", f"{name} takes {arity} argument(s), got {len(args)}")
    if name == "retrieve_tables_details":
        tables = args[0]
        if not isinstance(tables, (list, tuple)) or not all(isinstance(t, str) for t in tables):
            raise ActionParseError("arity", "retrieve_tables_details expects a list of table names")
        args = (list(tables),)
    if name in ("execute_sql", "execute_python_from_sql"):
        if not all(isinstance(a, str) and a.strip() for a in args):
            raise ActionParseError("arity", f"{name} expects non-empty string arguments")
    return tuple(args)


class CodeRunner(Protocol):
    def run(self, program: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str: ...


class SubprocessCodeRunner:
    """Runs post-processing code in a separate interpreter with a timeout.

    The SQL result is bound to ``sql_results`` (a pandas DataFrame when pandas
    is importable, else a list of dicts). This isolates crashes and hangs; it is
    not a security boundary.
    """

    PREAMBLE = (
        "import json, sys\n"
        "_d = json.load(sys.stdin)\n"
        "try:\n"
        "    import pandas as _pd\n"
        "    sql_results = _pd.DataFrame(_d['rows'], columns=_d['columns'])\n"
        "except ImportError:\n"
        "    sql_results = [dict(zip(_d['columns'], r)) for r in _d['rows']]\n"
    )

    def __init__(self, timeout: float = 20.0, output_cap: int = _OBSERVATION_CAP):
        self.timeout = timeout
        self.output_cap = output_cap

    def run(self, program: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
        payload = json.dumps({"columns": list(columns), "rows": [list(r) for r in rows]})
        try:
            proc = subprocess.run(
                [sys.executable, "-c", self.PREAMBLE + program],
                input=payload, capture_output=True, text=True, timeout=self.timeout,
            )
        except subprocess.TimeoutExpired:
            return f"Error: post-processing timed out after {self.timeout:g}s"
        if proc.returncode != 0:
            lines = [ln for ln in proc.stderr.strip().splitlines() if ln.strip()]
            return "Error: " + (lines[-1] if lines else f"exit status {proc.returncode}")
        return proc.stdout.strip()[: self.output_cap]


def _cap(text: str, limit: int = _OBSERVATION_CAP) -> str:
    return text if len(text) <= limit else text[:limit] + f"\n…[{len(text) - limit} more chars]"


class Executor:
    def __init__(
        self,
        gateway: Gateway,
        database: Database,
        config: ResearchConfig,
        runner: CodeRunner | None = None,
        runner_row_limit: int = 10_000,
    ):
        self.gateway = gateway
        self.database = database
        self.config = config
        self.runner = runner
        self.runner_row_limit = runner_row_limit

    @property
    def current_date(self) -> str:
        day = self.config.search_date_cutoff or dt.date.today()
        return day.isoformat()

    # ---- actions --------------------------------------------------------

    def run_post_processing(self, sql: str, program: str, session: DataAdapter | None = None) -> str:
        if self.runner is None:
            return POST_PROCESSING_UNAVAILABLE
        own = session is None
        session = session or self.database.session()
        try:
            result = session.execute_sql(sql, self.runner_row_limit)
        except SQLExecutionError as exc:
            return f"SQL error: {exc}"
        finally:
            if own:
                session.close()
        try:
            return self.runner.run(program, result.columns, result.rows)
        except Exception as exc:
            return f"Error: {exc}"

    def _observe(self, action: Action, session: DataAdapter, state: dict) -> str:
        if action.kind == "get_tables":
            tables = session.get_tables()
            if not tables:
                return "No tables."
            return "\n".join(f"- {name}: {desc}" for name, desc in tables)
        if action.kind == "retrieve_tables_details":
            try:
                details = session.table_details(action.args[0])
            except UnknownTableError as exc:
                return f"Error: {exc}"
            blocks = []
            for d in details:
                cols = "\n".join(
                    f"  - {c.name} ({c.declared_type}); samples: {', '.join(c.samples) or '-'}"
                    for c in d.columns
                )
                blocks.append(f"Table {d.name}: {d.description}\n{cols}")
            return "\n".join(blocks) or "No tables requested."
        if action.kind == "execute_sql":
            sql = action.args[0]
            try:
                result = session.execute_sql(sql)
            except SQLExecutionError as exc:
                return f"SQL error: {exc}"
            state["sql"], state["result"] = sql, result
            return render_answer(result, column_summaries(result))
        if action.kind == "execute_python_from_sql":
            sql, program = action.args
            try:
                result = session.execute_sql(sql)
            except SQLExecutionError as exc:
                return f"SQL error: {exc}"
            state["sql"], state["result"] = sql, result
            return self.run_post_processing(sql, program, session)
        raise AssertionError(action.kind)

    # ---- loop -----------------------------------------------------------

    def _loop(
        self, question: str, history: Sequence[dict], session: DataAdapter, record_id: str | None = None
    ) -> tuple[ExecutorTranscript, TableResult | None]:
        steps: list[ExecutorStep] = []
        state: dict[str, Any] = {"sql": None, "result": None}
        stopped = False
        for _ in range(self.config.executor_turn_cap):
            text = self.gateway.complete_text(
                "executor_main",
                {
                    "database_type": session.database_type,
                    "curr_date": self.current_date,
                    "question": question,
                    "conversation_history": list(history),
                    "action_history": [
                        f"Thought: {s.thought}\nAction: {s.action}\nObservation: {_cap(s.observation)}"
                        for s in steps
                    ],
                },
            )
            try:
                action = parse_action(text)
            except ActionParseError as exc:
                steps.append(ExecutorStep(thought=text.strip()[:500], action="(invalid)",
                                          observation=f"Error: {exc}"))
                continue
            if action.kind == "stop":
                steps.append(ExecutorStep(thought=action.thought, action="stop()", observation="Stopped."))
                stopped = True
                break
            observation = self._observe(action, session, state)
            steps.append(ExecutorStep(thought=action.thought, action=action.render(), observation=observation))
        final_sql = state["sql"]
        answer = None
        if final_sql is not None:
            result = state["result"]
            answer = render_answer(result, column_summaries(result))
        transcript = ExecutorTranscript(
            question=question, record_id=record_id, steps=tuple(steps), final_sql=final_sql,
            final_answer=answer, stopped=stopped,
        )
        return transcript, state["result"]

    def answer_question(
        self,
        question: ExplorationQuestion,
        history: Sequence[dict] = (),
        *,
        record_id: str = "Q",
        layer: int = 1,
    ) -> tuple[QueryRecord, ExecutorTranscript]:
        if question.destination is not Destination.DATABASE:
            raise ValueError("executor only answers database questions")
        session = self.database.session()
        try:
            transcript, result = self._loop(question.text, history, session, record_id)
        finally:
            session.close()
        if transcript.final_sql is None:
            record = QueryRecord(
                id=record_id, question=question, layer=layer, answered=False,
                flags=("unanswered: no SQL executed",),
            )
        else:
            flags = () if transcript.stopped else ("turn cap reached; last executed SQL used",)
            record = QueryRecord(
                id=record_id, question=question, sql=transcript.final_sql,
                answer=transcript.final_answer, layer=layer, flags=flags,
                summaries=tuple(column_summaries(result)),
            )
        return record, transcript

    def apply_follow_up(self, record: QueryRecord, follow_up: str) -> tuple[QueryRecord, ExecutorTranscript]:
        """Re-run the loop seeded with the original question and SQL plus the instruction."""
        if not follow_up or not follow_up.strip():
            raise ValueError("follow_up must be non-empty")
        if not record.sql or not record.answer:
            raise ValueError("record has no SQL/answer to revise")
        history = [{
            "question": record.question.text,
            "action_history": [f"Action: execute_sql({json.dumps(record.sql)})"],
            "response": f"Final SQL: {record.sql}",
        }]
        question = (
            f"Follow-up on the previous question ({record.question.text}): {follow_up.strip()} "
            "Revise the previous SQL accordingly."
        )
        session = self.database.session()
        try:
            transcript, result = self._loop(question, history, session, record.id)
        finally:
            session.close()
        if transcript.final_sql is None:
            revised = record.model_copy(
                update={"flags": record.flags + (f"revision failed: {follow_up.strip()}",)}
            )
        else:
            revised = record.model_copy(update={
                "revised_sql": transcript.final_sql,
                "revised_answer": transcript.final_answer,
                "follow_up": follow_up.strip(),
                "summaries": tuple(column_summaries(result)),
            })
        return revised, transcript
