import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import db_from_rows, make_db
from dbresearch.data import (
    Database,
    DatabaseError,
    IngestError,
    MultiStatementError,
    SQLExecutionError,
    TableResult,
    UnknownTableError,
    column_summaries,
    render_answer,
    render_stats_block,
    split_statements,
    summarize_rows,
)
from oracles import naive_column_stats


def _summary_tuple(s):
    return s.distinct_pct, list(s.top_values), s.numeric_stats


# ---- ingestion -------------------------------------------------------------

def test_ingest_returns_row_count(tmp_path):
    csv = tmp_path / "t.csv"
    csv.write_text("a,b\n1,x\n2,y\n3,z\n")
    db = Database(str(tmp_path / "d.sqlite"))
    with db.session(create=True) as s:
        assert s.ingest_csv(csv, "t") == 3


def test_one_text_cell_makes_column_text(tmp_path):
    db = db_from_rows(tmp_path / "d.sqlite", "t", ["a", "b"], [[1, 2], [2, "x"], [3, 4]])
    with db.session() as s:
        types = {c.name: c.declared_type for c in s.table_details(["t"])[0].columns}
    assert types == {"a": "INTEGER", "b": "TEXT"}


def test_ragged_row_names_line_number(tmp_path):
    csv = tmp_path / "t.csv"
    csv.write_text("a,b\n1,2\n3\n")
    db = Database(str(tmp_path / "d.sqlite"))
    with db.session(create=True) as s, pytest.raises(IngestError, match="line 3"):
        s.ingest_csv(csv, "t")


def test_empty_file_and_name_collision(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    db = make_db(tmp_path / "d.sqlite")
    with db.session() as s:
        with pytest.raises(IngestError, match="empty"):
            s.ingest_csv(empty, "other")
        with pytest.raises(IngestError, match="already exists"):
            s.ingest_csv(_tiny(tmp_path), "events")


def _tiny(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("a\n1\n")
    return p


# ---- introspection ---------------------------------------------------------

def test_get_tables_two_entries_with_descriptions(tmp_path):
    db = Database(str(tmp_path / "d.sqlite"))
    with db.session(create=True) as s:
        assert s.get_tables() == []
        s.ingest_csv(_tiny(tmp_path), "A", description="first table")
        s.ingest_csv(_tiny(tmp_path), "B")
        tables = dict(s.get_tables())
    assert tables == {"A": "first table", "B": "1 rows, columns: a"}


def test_closed_session_raises(tmp_path):
    db = make_db(tmp_path / "d.sqlite")
    s = db.session()
    s.close()
    with pytest.raises(DatabaseError):
        s.get_tables()


def test_missing_database_file_is_an_error(tmp_path):
    with pytest.raises(DatabaseError, match="not found"):
        Database(str(tmp_path / "absent.sqlite")).session()


def test_table_details_31_columns(tmp_path):
    header = [f"c{i}" for i in range(31)]
    rows = [[f"v{r}_{i}" for i in range(31)] for r in range(5)]
    db = db_from_rows(tmp_path / "d.sqlite", "events", header, rows)
    with db.session() as s:
        (desc,) = s.table_details(["events"])
        assert len(desc.columns) == 31
        assert desc.columns[0].samples == ("v0_0", "v1_0", "v2_0")
        assert s.table_details([]) == []
        with pytest.raises(UnknownTableError, match="nope"):
            s.table_details(["nope"])


# ---- execute_sql -----------------------------------------------------------

def test_select_one(tmp_path):
    db = make_db(tmp_path / "d.sqlite")
    with db.session() as s:
        r = s.execute_sql("SELECT 1")
    assert r.rows == (("1",),) and not r.truncated


def test_truncation_120_rows(tmp_path):
    db = db_from_rows(tmp_path / "d.sqlite", "t", ["x"], [[i] for i in range(120)])
    with db.session() as s:
        r = s.execute_sql("SELECT x FROM t", row_limit=50)
        _, summaries, text = s.query("SELECT x FROM t", row_limit=50)
    assert (len(r.rows), r.total_row_count, r.truncated) == (50, 120, True)
    assert text.startswith("Result: showing 50 of 120 rows (first 20 listed)")
    # distinct_pct comes from the full result, not the 50 kept rows
    assert summaries[0].distinct_pct == 1.0
    assert summaries[0].numeric_stats[1] == 119


def test_preview_header_for_truncated_result():
    rows = tuple((str(i),) for i in range(50))
    r = TableResult(("x",), rows, 120, True)
    text = render_answer(r, column_summaries(r), preview_rows=50)
    assert text.startswith("Result: showing 50 of 120 rows")


def test_multi_statement_rejected(toy_db):
    with toy_db.session() as s, pytest.raises(MultiStatementError):
        s.execute_sql("SELECT a FROM t; SELECT b FROM t")


def test_semicolon_inside_string_is_one_statement():
    assert split_statements("SELECT ';' AS x;") == ["SELECT ';' AS x"]


def test_writes_rejected_and_engine_errors_surface(toy_db):
    with toy_db.session() as s:
        with pytest.raises(SQLExecutionError, match="read-only"):
            s.execute_sql("DROP TABLE events")
        with pytest.raises(SQLExecutionError, match="no such column"):
            s.execute_sql("SELECT nope FROM events")


def test_long_cells_are_elided(tmp_path):
    db = db_from_rows(tmp_path / "d.sqlite", "t", ["s"], [["y" * 300]], cell_char_limit=200)
    with db.session() as s:
        r = s.execute_sql("SELECT s FROM t")
    assert r.elided and r.rows[0][0].endswith("…[+100 chars]")
    assert r.full_summaries[0].top_values[0][0] == "y" * 300


# ---- summaries -------------------------------------------------------------

def test_five_five_seven():
    (s,) = summarize_rows(["v"], [("5",), ("5",), ("7",)])
    assert s.distinct_pct == pytest.approx(2 / 3)
    assert s.top_values == (("5", 2), ("7", 1))
    lo, hi, med, mean = s.numeric_stats
    assert (lo, hi, med) == (5, 7, 5)
    assert mean == pytest.approx(5.667, abs=1e-3)


def test_empty_result_summary():
    (s,) = summarize_rows(["v"], [])
    assert (s.distinct_pct, s.top_values, s.numeric_stats) == (0.0, (), None)


def test_nulls_count_as_value_but_not_in_numeric_stats():
    (s,) = summarize_rows(["v"], [("1",), (None,), (None,), ("3",)])
    assert s.top_values[0] == ("NULL", 2)
    assert s.numeric_stats == (1.0, 3.0, 2.0, 2.0)


def test_stats_block_format():
    num, txt = summarize_rows(["n", "t"], [("1", "a"), ("2", "b")])
    block = render_stats_block([num, txt])
    lines = block.splitlines()
    assert lines[1] == "- n: distinct_pct=1.0000; top5=1 (1), 2 (1); min=1, max=2, median=1.5, mean=1.5"
    assert "min=" not in lines[2]


def test_1000_random_integers_match_oracle(tmp_path):
    rng = random.Random(3)
    values = [rng.randint(-50, 50) for _ in range(1000)]
    db = db_from_rows(tmp_path / "d.sqlite", "t", ["x"], [[v] for v in values])
    with db.session() as s:
        r = s.execute_sql("SELECT x FROM t", row_limit=50)
    assert _summary_tuple(column_summaries(r)[0]) == naive_column_stats(values)


cells = st.one_of(
    st.none(),
    st.integers(-1000, 1000).map(str),
    st.floats(-1e6, 1e6, allow_nan=False).map(repr),
    st.sampled_from(["a", "b", "Mali", "", " "]),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(cells, max_size=60))
def test_summary_matches_oracle_and_invariants(values):
    (s,) = summarize_rows(["v"], [(v,) for v in values])
    pct, top, numeric = naive_column_stats(values)
    assert s.distinct_pct == pct and list(s.top_values) == top
    if numeric is None:
        assert s.numeric_stats is None
    else:
        assert s.numeric_stats[:3] == numeric[:3]
        assert s.numeric_stats[3] == pytest.approx(numeric[3], rel=1e-9, abs=1e-9)
        lo, hi, med, mean = s.numeric_stats
        assert lo <= med <= hi and lo <= mean <= hi
    assert 0 <= s.distinct_pct <= 1
    counts = [c for _, c in s.top_values]
    assert counts == sorted(counts, reverse=True)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(cells, cells), max_size=40), st.randoms(use_true_random=False))
def test_summaries_are_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert summarize_rows(["a", "b"], rows) == summarize_rows(["a", "b"], shuffled)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 300), st.integers(1, 80))
def test_never_more_than_row_limit(tmp_path_factory, n, limit):
    path = tmp_path_factory.mktemp("lim") / "d.sqlite"
    db = db_from_rows(path, "t", ["x"], [[i] for i in range(n)])
    with db.session() as s:
        r = s.execute_sql("SELECT x FROM t", row_limit=limit)
    assert len(r.rows) == min(n, limit) and r.total_row_count == n
