"""Database access, CSV ingestion and per-column summary statistics.

``execute_sql`` streams the full result once: the first ``row_limit`` rows are
kept for display while every row feeds the column accumulators, so summary
statistics always describe the untruncated result.
"""

from __future__ import annotations

import csv
import logging
import math
import re
import sqlite3
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .models import ColumnSummary

logger = logging.getLogger(__name__)

NULL_TOKEN = "NULL"
_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_INTERNAL_PREFIX = "_dbr_"
_NOTES_TABLE = "_dbr_table_notes"
_READ_VERBS = ("select", "with", "values", "explain")


class DatabaseError(RuntimeError):
    """Connection-level failure."""


class SQLExecutionError(DatabaseError):
    """The engine rejected a statement; the message is the engine's."""


class MultiStatementError(SQLExecutionError):
    pass


class UnknownTableError(KeyError):
    def __init__(self, name: str):
        super().__init__(f"unknown table: {name}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class IngestError(ValueError):
    pass


def is_number(text: str) -> bool:
    return bool(_NUMBER.match(text.strip()))


@dataclass(frozen=True)
class TableResult:
    columns: tuple[str, ...]
    rows: tuple[tuple[str | None, ...], ...]
    total_row_count: int
    truncated: bool
    elided: bool = False
    full_summaries: tuple[ColumnSummary, ...] | None = None

    def __post_init__(self):
        if self.truncated != (self.total_row_count > len(self.rows)):
            raise ValueError("truncated flag inconsistent with row counts")
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row width does not match column count")


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    declared_type: str
    samples: tuple[str, ...]


@dataclass(frozen=True)
class TableDescriptor:
    name: str
    description: str
    columns: tuple[ColumnInfo, ...]


def _to_text(value: Any) -> str | None:
    if value is None:
        return None
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, float):
        return repr(value)
    return str(value)


class _ColumnAccumulator:
    """Streaming per-column statistics (one instance per column)."""

    __slots__ = ("counts", "n", "numbers", "numeric")

    def __init__(self):
        self.counts: Counter[str] = Counter()
        self.n = 0
        self.numbers: list[float] = []
        self.numeric = True

    def add(self, value: str | None) -> None:
        self.n += 1
        if value is None:
            self.counts[NULL_TOKEN] += 1
            return
        self.counts[value] += 1
        if self.numeric:
            if is_number(value):
                self.numbers.append(float(value))
            else:
                self.numeric = False
                self.numbers = []

    def summary(self, column: str) -> ColumnSummary:
        if self.n == 0:
            return ColumnSummary(column=column, distinct_pct=0.0)
        top = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        stats = None
        if self.numeric and self.numbers:
            ordered = sorted(self.numbers)
            k = len(ordered)
            mid = k // 2
            median = ordered[mid] if k % 2 else (ordered[mid - 1] + ordered[mid]) / 2
            mean = math.fsum(ordered) / k
            # fsum/k can land one ulp outside [min, max] for constant columns
            mean = min(max(mean, ordered[0]), ordered[-1])
            stats = (ordered[0], ordered[-1], median, mean)
        return ColumnSummary(
            column=column,
            distinct_pct=len(self.counts) / self.n,
            top_values=tuple(top),
            numeric_stats=stats,
        )


def summarize_rows(
    columns: Sequence[str], rows: Iterable[Sequence[str | None]]
) -> list[ColumnSummary]:
    accs = [_ColumnAccumulator() for _ in columns]
    for row in rows:
        for acc, value in zip(accs, row):
            acc.add(value)
    return [acc.summary(col) for acc, col in zip(accs, columns)]


def column_summaries(result: TableResult) -> list[ColumnSummary]:
    """Per-column statistics; uses full-result statistics when the adapter computed them."""
    if result.full_summaries is not None:
        return list(result.full_summaries)
    return summarize_rows(result.columns, result.rows)


def _fmt(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.6g}"


def render_stats_block(summaries: Sequence[ColumnSummary]) -> str:
    """Frozen statistics text format; prompts depend on it, change with care."""
    lines = ["Column statistics:"]
    for s in summaries:
        top = ", ".join(f"{v} ({c})" for v, c in s.top_values) or "-"
        line = f"- {s.column}: distinct_pct={s.distinct_pct:.4f}; top5={top}"
        if s.numeric_stats is not None:
            lo, hi, med, mean = s.numeric_stats
            line += f"; min={_fmt(lo)}, max={_fmt(hi)}, median={_fmt(med)}, mean={_fmt(mean)}"
        lines.append(line)
    return "\n".join(lines)


def render_answer(
    result: TableResult, summaries: Sequence[ColumnSummary], preview_rows: int = 20
) -> str:
    shown = result.rows[:preview_rows]
    if result.truncated:
        header = f"Result: showing {len(result.rows)} of {result.total_row_count} rows"
    else:
        header = f"Result: {result.total_row_count} rows"
    if len(shown) < len(result.rows):
        header += f" (first {len(shown)} listed)"
    lines = [header]
    if result.columns:
        lines.append(" | ".join(result.columns))
        for row in shown:
            lines.append(" | ".join(NULL_TOKEN if v is None else v for v in row))
    lines.append("")
    lines.append(render_stats_block(summaries))
    return "\n".join(lines)


def split_statements(sql: str) -> list[str]:
    """Split on semicolons outside quotes/comments; empty statements dropped."""
    parts, buf, quote = [], [], None
    i = 0
    while i < len(sql):
        ch = sql[i]
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
        elif ch in ("'", '"'):
            quote = ch
            buf.append(ch)
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = len(sql) if end == -1 else end
            continue
        elif ch == ";":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return [p.strip() for p in parts if p.strip()]


def quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


class Database:
    """Connection factory; every :meth:`session` is an independent connection."""

    def __init__(self, dsn: str, *, row_limit: int = 50, cell_char_limit: int = 200):
        self.dsn = dsn
        self.row_limit = row_limit
        self.cell_char_limit = cell_char_limit
        if dsn.startswith(("postgres://", "postgresql://")):
            self.dialect = "postgresql"
        else:
            self.dialect = "sqlite"
            path = dsn[len("sqlite:///"):] if dsn.startswith("sqlite:///") else dsn
            self.path = path

    def session(self, create: bool = False) -> "DataAdapter":
        """Open a connection. SQLite files must already exist unless ``create`` is set."""
        if self.dialect == "postgresql":
            try:
                import psycopg  # type: ignore
            except ImportError as exc:
                raise DatabaseError("postgresql support requires the 'psycopg' package") from exc
            try:
                conn = psycopg.connect(self.dsn)
            except Exception as exc:
                raise DatabaseError(f"cannot connect: {exc}") from exc
        else:
            if self.path != ":memory:" and not Path(self.path).parent.exists():
                raise DatabaseError(f"cannot connect: directory missing for {self.path}")
            if self.path != ":memory:" and not create and not Path(self.path).exists():
                raise DatabaseError(f"database file not found: {self.path}")
            try:
                conn = sqlite3.connect(self.path, check_same_thread=False)
            except sqlite3.Error as exc:
                raise DatabaseError(f"cannot connect: {exc}") from exc
        return DataAdapter(conn, self.dialect, self.row_limit, self.cell_char_limit)

    def ping(self) -> None:
        session = self.session()
        try:
            session.execute_sql("SELECT 1")
        except SQLExecutionError as exc:
            raise DatabaseError(str(exc)) from exc
        finally:
            session.close()

    def describe(self) -> str:
        session = self.session()
        try:
            return session.describe()
        finally:
            session.close()


class DataAdapter:
    """One database session. Not shared between threads."""

    def __init__(self, conn, dialect: str = "sqlite", row_limit: int = 50, cell_char_limit: int = 200):
        self.conn = conn
        self.dialect = dialect
        self.row_limit = row_limit
        self.cell_char_limit = cell_char_limit
        self._closed = False
        self._lock = threading.Lock()

    @property
    def database_type(self) -> str:
        return "PostgreSQL" if self.dialect == "postgresql" else "SQLite"

    def close(self) -> None:
        if not self._closed:
            self.conn.close()
            self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check_open(self):
        if self._closed:
            raise DatabaseError("connection is closed")

    def _cursor_execute(self, sql: str, params: Sequence[Any] = ()):
        self._check_open()
        try:
            cur = self.conn.cursor()
            cur.execute(sql, params)
            return cur
        except sqlite3.ProgrammingError as exc:
            if "closed" in str(exc).lower():
                raise DatabaseError(f"connection error: {exc}") from exc
            raise SQLExecutionError(str(exc)) from exc
        except Exception as exc:
            if self.dialect == "postgresql":
                self.conn.rollback()
            raise SQLExecutionError(str(exc)) from exc

    # ---- schema ---------------------------------------------------------

    def _table_names(self) -> list[str]:
        if self.dialect == "postgresql":
            cur = self._cursor_execute(
                "SELECT table_name FROM information_schema.tables "
                "WHERE table_schema = 'public' ORDER BY table_name"
            )
        else:
            cur = self._cursor_execute(
                "SELECT name FROM sqlite_master WHERE type IN ('table', 'view') ORDER BY name"
            )
        return [
            r[0] for r in cur.fetchall()
            if not r[0].startswith(_INTERNAL_PREFIX) and not r[0].startswith("sqlite_")
        ]

    def _columns(self, table: str) -> list[tuple[str, str]]:
        if self.dialect == "postgresql":
            cur = self._cursor_execute(
                "SELECT column_name, data_type FROM information_schema.columns "
                "WHERE table_name = %s ORDER BY ordinal_position", (table,),
            )
            return [(r[0], r[1]) for r in cur.fetchall()]
        cur = self._cursor_execute(f"PRAGMA table_info({quote_ident(table)})")
        return [(r[1], r[2] or "TEXT") for r in cur.fetchall()]

    def _row_count(self, table: str) -> int:
        return self._cursor_execute(f"SELECT COUNT(*) FROM {quote_ident(table)}").fetchone()[0]

    def _note(self, table: str) -> str | None:
        if _NOTES_TABLE not in self._all_names():
            return None
        ph = "%s" if self.dialect == "postgresql" else "?"
        row = self._cursor_execute(
            f"SELECT description FROM {_NOTES_TABLE} WHERE name = {ph}", (table,)
        ).fetchone()
        return row[0] if row else None

    def _all_names(self) -> set[str]:
        if self.dialect == "postgresql":
            cur = self._cursor_execute(
                "SELECT table_name FROM information_schema.tables WHERE table_schema = 'public'"
            )
        else:
            cur = self._cursor_execute("SELECT name FROM sqlite_master")
        return {r[0] for r in cur.fetchall()}

    def get_tables(self) -> list[tuple[str, str]]:
        """All user tables with a short description (stored note or auto-generated)."""
        out = []
        for name in self._table_names():
            note = self._note(name)
            if note is None:
                cols = ", ".join(c for c, _ in self._columns(name))
                note = f"{self._row_count(name)} rows, columns: {cols}"
            out.append((name, note))
        return out

    def table_details(self, names: Sequence[str]) -> list[TableDescriptor]:
        known = set(self._table_names())
        for name in names:
            if name not in known:
                raise UnknownTableError(name)
        out = []
        for name in names:
            cols = self._columns(name)
            infos = []
            for col, ctype in cols:
                cur = self._cursor_execute(
                    f"SELECT DISTINCT {quote_ident(col)} FROM {quote_ident(name)} "
                    f"WHERE {quote_ident(col)} IS NOT NULL ORDER BY 1 LIMIT 3"
                )
                samples = tuple(self._elide(_to_text(r[0]))[0] for r in cur.fetchall())
                infos.append(ColumnInfo(col, ctype, samples))
            note = self._note(name) or f"{self._row_count(name)} rows"
            out.append(TableDescriptor(name, note, tuple(infos)))
        return out

    def describe(self) -> str:
        """Compact schema text for prompts: tables, columns, types, samples."""
        blocks = []
        for desc in self.table_details([n for n, _ in self.get_tables()]):
            cols = "; ".join(
                f"{c.name} ({c.declared_type}) e.g. {', '.join(c.samples) or '-'}" for c in desc.columns
            )
            blocks.append(f"Table {desc.name}: {desc.description}. Columns: {cols}")
        return "\n".join(blocks) if blocks else "(empty database)"

    # ---- queries --------------------------------------------------------

    def _elide(self, value: str | None) -> tuple[str | None, bool]:
        if value is None or len(value) <= self.cell_char_limit:
            return value, False
        extra = len(value) - self.cell_char_limit
        return value[: self.cell_char_limit] + f"…[+{extra} chars]", True

    def execute_sql(self, sql: str, row_limit: int | None = None) -> TableResult:
        """Run one read-only statement; keep ``row_limit`` rows, summarise all of them."""
        limit = self.row_limit if row_limit is None else row_limit
        statements = split_statements(sql)
        if len(statements) > 1:
            raise MultiStatementError("only one SQL statement is allowed per call")
        if not statements:
            raise SQLExecutionError("empty SQL")
        stmt = statements[0]
        if not stmt.split(None, 1)[0].lower() in _READ_VERBS:
            raise SQLExecutionError("only read-only queries (SELECT/WITH) are allowed")
        with self._lock:
            cur = self._cursor_execute(stmt)
            if cur.description is None:
                return TableResult((), (), 0, False, full_summaries=())
            columns = tuple(d[0] for d in cur.description)
            accs = [_ColumnAccumulator() for _ in columns]
            kept: list[tuple[str | None, ...]] = []
            total = 0
            elided_any = False
            try:
                while True:
                    batch = cur.fetchmany(1000)
                    if not batch:
                        break
                    for raw in batch:
                        total += 1
                        row = tuple(_to_text(v) for v in raw)
                        for acc, v in zip(accs, row):
                            acc.add(v)
                        if len(kept) < limit:
                            shown = []
                            for v in row:
                                v2, el = self._elide(v)
                                elided_any |= el
                                shown.append(v2)
                            kept.append(tuple(shown))
            except Exception as exc:
                raise SQLExecutionError(str(exc)) from exc
        summaries = tuple(acc.summary(c) for acc, c in zip(accs, columns))
        return TableResult(
            columns=columns,
            rows=tuple(kept),
            total_row_count=total,
            truncated=total > len(kept),
            elided=elided_any,
            full_summaries=summaries,
        )

    def query(self, sql: str, row_limit: int | None = None) -> tuple[TableResult, list[ColumnSummary], str]:
        """execute_sql + column_summaries + render_answer in one call."""
        result = self.execute_sql(sql, row_limit)
        summaries = column_summaries(result)
        return result, summaries, render_answer(result, summaries)

    # ---- ingestion ------------------------------------------------------

    def ingest_csv(self, path: str | Path, table_name: str, description: str | None = None) -> int:
        """Load a headered CSV into a new table; returns the number of data rows."""
        if not _IDENT.match(table_name) or table_name.startswith(_INTERNAL_PREFIX):
            raise IngestError(f"invalid table name: {table_name!r}")
        path = Path(path)
        if not path.is_file():
            raise IngestError(f"file not found: {path}")
        if table_name in self._all_names():
            raise IngestError(f"table already exists: {table_name}")
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise IngestError(f"empty file: {path}") from None
            header = [h.strip() for h in header]
            if not any(header):
                raise IngestError(f"empty header row in {path}")
            if len(set(header)) != len(header):
                raise IngestError("duplicate column names in header")
            rows = []
            for row in reader:
                if not row:
                    continue
                if len(row) != len(header):
                    raise IngestError(
                        f"line {reader.line_num}: expected {len(header)} fields, got {len(row)}"
                    )
                rows.append([None if c == "" else c for c in row])
        types = []
        for i in range(len(header)):
            cells = [r[i] for r in rows if r[i] is not None]
            if cells and all(is_number(c) for c in cells):
                all_int = all(re.fullmatch(r"[+-]?\d+", c.strip()) for c in cells)
                types.append("INTEGER" if all_int else "REAL")
            else:
                types.append("TEXT")
        converted = []
        for r in rows:
            out = []
            for v, t in zip(r, types):
                if v is None or t == "TEXT":
                    out.append(v)
                elif t == "INTEGER":
                    out.append(int(v))
                else:
                    out.append(float(v))
            converted.append(out)
        cols_sql = ", ".join(f"{quote_ident(h)} {t}" for h, t in zip(header, types))
        ph = ", ".join(["%s" if self.dialect == "postgresql" else "?"] * len(header))
        try:
            cur = self.conn.cursor()
            cur.execute(f"CREATE TABLE {quote_ident(table_name)} ({cols_sql})")
            cur.executemany(f"INSERT INTO {quote_ident(table_name)} VALUES ({ph})", converted)
            if description:
                cur.execute(f"CREATE TABLE IF NOT EXISTS {_NOTES_TABLE} (name TEXT PRIMARY KEY, description TEXT)")
                p = "%s" if self.dialect == "postgresql" else "?"
                cur.execute(f"INSERT INTO {_NOTES_TABLE} VALUES ({p}, {p})", (table_name, description))
            self.conn.commit()
        except Exception as exc:
            self.conn.rollback()
            raise IngestError(f"ingestion failed: {exc}") from exc
        logger.info("ingested %d rows into %s", len(converted), table_name)
        return len(converted)
