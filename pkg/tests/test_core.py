import datetime as dt
import json

import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from dbresearch.config import ConfigError, ResearchConfig, RunSettings, validate_config
from dbresearch.models import (
    CitationEntry,
    CitationKind,
    ColumnSummary,
    Destination,
    ExplorationQuestion,
    Insight,
    InsightBank,
    Provenance,
    QueryRecord,
    Thesis,
    WarmStartOutput,
    word_count,
)


def test_paper_profile_is_valid():
    cfg = ResearchConfig(max_layers=5, first_layer_questions=2, per_layer_questions=5,
                         thesis_interval=2, insight_cap=30, executor_turn_cap=15)
    assert validate_config(cfg) is cfg


def test_defaults():
    cfg = ResearchConfig()
    assert (cfg.max_layers, cfg.first_layer_questions, cfg.per_layer_questions) == (5, 2, 5)
    assert (cfg.thesis_interval, cfg.insight_cap, cfg.executor_turn_cap) == (2, 30, 15)
    assert (cfg.result_row_limit, cfg.cell_char_limit, cfg.report_word_cap) == (50, 200, 3000)


def test_zero_layers_rejected():
    with pytest.raises(ConfigError, match="max_layers must be ≥ 1") as exc:
        validate_config(ResearchConfig(max_layers=0))
    assert exc.value.field == "max_layers"


def test_interval_beyond_layers_rejected():
    with pytest.raises(ConfigError, match="thesis_interval exceeds max_layers") as exc:
        validate_config(ResearchConfig(max_layers=5, thesis_interval=6))
    assert exc.value.field == "thesis_interval"


def test_first_layer_may_exceed_per_layer():
    validate_config(ResearchConfig(first_layer_questions=7, per_layer_questions=2))


@pytest.mark.parametrize("field", ["insight_cap", "executor_turn_cap", "result_row_limit",
                                   "cell_char_limit", "report_word_cap"])
def test_caps_strictly_positive(field):
    with pytest.raises(ConfigError) as exc:
        validate_config(ResearchConfig(**{field: 0}))
    assert exc.value.field == field


def test_config_dict_round_trip():
    cfg = ResearchConfig(search_date_cutoff=dt.date(2024, 11, 18), blocked_domains=frozenset({"acleddata.com"}))
    data = json.loads(json.dumps(cfg.to_dict()))
    assert ResearchConfig.from_dict(data) == cfg


def test_unknown_config_field_named():
    with pytest.raises(ConfigError) as exc:
        ResearchConfig.from_dict({"max_layer": 3})
    assert exc.value.field == "max_layer"


def test_run_settings_resolve_relative_paths(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({
        "research": {"max_layers": 2, "thesis_interval": 1},
        "search": {"kind": "fixture", "path": "results.json"},
    }))
    s = RunSettings.load(tmp_path / "c.json")
    assert s.search["path"] == str(tmp_path / "results.json")
    assert s.research.max_layers == 2


# ---- domain types --------------------------------------------------------

def test_question_destination_enum():
    with pytest.raises(ValidationError):
        ExplorationQuestion(text="x", destination="web")
    with pytest.raises(ValidationError):
        ExplorationQuestion(text="  ", destination="database")


def test_database_insight_needs_evidence():
    with pytest.raises(ValidationError):
        Insight(id="a", text="x", provenance=Provenance.DATABASE)
    Insight(id="a", text="x", provenance=Provenance.INTERNET)


def test_bank_cap_and_unique_ids():
    ins = [Insight(id=f"i{k}", text="t", provenance="warmstart") for k in range(3)]
    with pytest.raises(ValidationError):
        InsightBank(insights=ins, cap=2)
    with pytest.raises(ValidationError):
        InsightBank(insights=[ins[0], ins[0]], cap=5)


def test_query_record_invariants():
    q = ExplorationQuestion(text="q", destination=Destination.DATABASE)
    with pytest.raises(ValidationError):
        QueryRecord(id="r", question=q, layer=1)  # answered db record without sql
    QueryRecord(id="r", question=q, layer=1, answered=False)
    with pytest.raises(ValidationError):
        QueryRecord(id="r", question=q, sql="SELECT 1", layer=1, follow_up="x")
    rec = QueryRecord(id="r", question=q, sql="S1", answer="A1", layer=1,
                      follow_up="f", revised_sql="S2", revised_answer="A2")
    assert (rec.final_sql, rec.final_answer, rec.sql) == ("S2", "A2", "S1")


def test_thesis_word_cap():
    Thesis(title="one two three four five six seven eight nine ten", version=1, layer_produced=2)
    with pytest.raises(ValidationError):
        Thesis(title="one two three four five six seven eight nine ten eleven", version=1, layer_produced=2)


def test_column_summary_invariants():
    with pytest.raises(ValidationError):
        ColumnSummary(column="c", distinct_pct=1.5)
    with pytest.raises(ValidationError):
        ColumnSummary(column="c", distinct_pct=0.5, top_values=(("a", 1), ("b", 2)))
    with pytest.raises(ValidationError):
        ColumnSummary(column="c", distinct_pct=0.5, numeric_stats=(5.0, 1.0, 3.0, 3.0))


def test_warm_start_contract():
    with pytest.raises(ValidationError):
        WarmStartOutput(report="r")
    WarmStartOutput(report="r", degraded=True)
    with pytest.raises(ValidationError):
        WarmStartOutput(report="r", insights=(Insight(id="a", text="t", provenance="internet"),))


def test_word_count_whitespace_tokens():
    assert word_count("a  b\tc\nd") == 4
    assert word_count("") == 0


# ---- round-trip properties -------------------------------------------------

text = st.text(min_size=1, max_size=30).filter(lambda s: s.strip())


@st.composite
def insights(draw):
    prov = draw(st.sampled_from(list(Provenance)))
    evidence = tuple(draw(st.lists(text, min_size=1 if prov is Provenance.DATABASE else 0, max_size=3)))
    return Insight(id=draw(text), text=draw(text), provenance=prov, evidence=evidence,
                   layer_created=draw(st.integers(0, 9)))


@st.composite
def summaries(draw):
    counts = sorted(draw(st.lists(st.integers(1, 50), max_size=5)), reverse=True)
    values = draw(st.lists(text, min_size=len(counts), max_size=len(counts)))
    stats = None
    if draw(st.booleans()):
        xs = sorted(draw(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4)))
        stats = (xs[0], xs[3], xs[1], xs[2])
    return ColumnSummary(column=draw(text), distinct_pct=draw(st.floats(0, 1)),
                         top_values=tuple(zip(values, counts)), numeric_stats=stats)


@settings(max_examples=60)
@given(st.one_of(
    insights(),
    summaries(),
    st.builds(Thesis, title=st.lists(st.sampled_from("ab cd ef".split()), min_size=1, max_size=10).map(" ".join),
              research_strategy=st.text(max_size=20), version=st.integers(1, 9), layer_produced=st.integers(1, 9)),
    st.builds(CitationEntry, id=st.integers(1, 99), kind=st.sampled_from(list(CitationKind)),
              content=st.text(max_size=40), origin=text),
))
def test_json_round_trip(value):
    assert type(value).model_validate_json(value.model_dump_json()) == value


@settings(max_examples=30)
@given(st.lists(insights(), max_size=6, unique_by=lambda i: i.id), st.integers(6, 9))
def test_bank_round_trip(items, cap):
    bank = InsightBank(insights=items, cap=cap)
    assert InsightBank.model_validate_json(bank.model_dump_json()) == bank
