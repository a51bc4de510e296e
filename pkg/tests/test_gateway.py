import json
import re

import pytest
from hypothesis import given, settings, strategies as st

from conftest import ROOT, fn_gateway, j, scripted
from dbresearch.llm import schemas, templates
from dbresearch.llm.gateway import (
    Gateway,
    GatewayError,
    ProviderConfigError,
    ResponseCache,
    ScriptedProvider,
    StructuredOutputError,
    build_provider,
    cache_key,
    record_replay_mode,
)
from dbresearch.llm.templates import TEMPLATES, MissingBindingError

SOURCE_DOC = ROOT / "paper.md"
OWN_TEMPLATES = {"warmstart_queries", "warmstart_report", "internet_answer", "title_package"}


def _bindings(template, value="x"):
    return {name: value for name in template.required}


# ---- templates -------------------------------------------------------------

def test_question_template_omits_thesis_block_when_absent():
    base = {
        "max_questions": 5, "db_description": "events table", "global_insights": "none",
        "dialogue_turns": "none", "topic": "Sahel",
    }
    without = templates.render("exploration_question_direct_gen", base)
    with_thesis = templates.render(
        "exploration_question_direct_gen", {**base, "thesis": "Burkina Faso matters", "research_strategy": "s"}
    )
    assert "You are building evidence for the following thesis" not in without
    assert 'You are building evidence for the following thesis: "Burkina Faso matters"' in with_thesis


def test_summary_prompt_asks_for_three_to_five_sentences():
    assert "3-5 sentences" in templates.render("summary_prompt", {"insights": "- a\n- b"})


def test_missing_mandatory_binding_names_template_and_variable():
    bindings = _bindings(TEMPLATES["outline_gen"])
    del bindings["thesis"]
    with pytest.raises(MissingBindingError) as err:
        templates.render("outline_gen", bindings)
    assert err.value.template_id == "outline_gen"
    assert err.value.name == "thesis"


def test_unknown_template_is_rejected():
    with pytest.raises(KeyError):
        templates.render("no_such_template", {})


@pytest.mark.parametrize("template_id", sorted(TEMPLATES))
def test_every_template_renders_its_anchor(template_id):
    t = TEMPLATES[template_id]
    assert t.anchor
    assert t.anchor in templates.render(template_id, _bindings(t))


@pytest.mark.skipif(not SOURCE_DOC.exists(), reason="source document not in workspace")
@pytest.mark.parametrize("template_id", sorted(set(TEMPLATES) - OWN_TEMPLATES))
def test_transcribed_anchor_appears_in_source_document(template_id):
    norm = lambda s: re.sub(r"\s+", " ", s.replace("\\_", "_"))
    assert norm(TEMPLATES[template_id].anchor) in norm(SOURCE_DOC.read_text())


@settings(max_examples=60, deadline=None)
@given(
    template_id=st.sampled_from(sorted(TEMPLATES)),
    value=st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40),
)
def test_anchor_survives_any_binding_value(template_id, value):
    t = TEMPLATES[template_id]
    assert t.anchor in templates.render(template_id, _bindings(t, value))


# ---- structured output -----------------------------------------------------

QUESTIONS_OK = j({"questions": [{"question": "How many events per year?", "destination": "database"}]})
QUESTIONS_BAD = j({"questions": [{"question": "How many events per year?", "destination": "web"}]})
INIT = {"topic": "Sahel", "db_description": "events", "num_questions": 2}


def test_structured_happy_path():
    gw = scripted({"initial_questions": [QUESTIONS_OK]})
    out = gw.complete_structured("initial_questions", INIT, schemas.QUESTIONS)
    assert [q.text for q in out] == ["How many events per year?"]
    assert out[0].destination.value == "database"
    assert [c.status for c in gw.calls] == ["ok"]


def test_invalid_destination_is_retried_with_the_error_appended():
    gw = scripted({"initial_questions": [QUESTIONS_BAD, QUESTIONS_OK]})
    out = gw.complete_structured("initial_questions", INIT, schemas.QUESTIONS)
    assert len(out) == 1
    assert [c.status for c in gw.calls] == ["invalid", "ok"]
    assert "Your previous response was invalid" in gw.calls[1].prompt
    assert "destination" in gw.calls[1].prompt.split("Your previous response was invalid")[1]


def test_persistent_violation_raises_after_configured_retries():
    gw = scripted({"initial_questions": [QUESTIONS_BAD] * 10}, retries=2)
    with pytest.raises(StructuredOutputError) as err:
        gw.complete_structured("initial_questions", INIT, schemas.QUESTIONS)
    assert err.value.template_id == "initial_questions"
    assert len(gw.calls) == 3


def test_fenced_json_is_accepted():
    gw = scripted({"initial_questions": ["```json\n" + QUESTIONS_OK + "\n```"]})
    assert len(gw.complete_structured("initial_questions", INIT, schemas.QUESTIONS)) == 1


def test_view_queries_must_be_select():
    gw = scripted({"*": [j({"queries": ["DELETE FROM events"]})] * 4}, retries=1)
    with pytest.raises(StructuredOutputError):
        gw.complete_structured(
            "exploration_direct_SQL_gen",
            {"max_questions": 1, "db_description": "d", "dialogue_turns": "t", "topic": "x", "database_type": "sqlite"},
            schemas.VIEW_QUERIES,
        )


# ---- record / replay -------------------------------------------------------

def _echo(request):
    return j({"questions": [{"question": f"Q about {len(request.prompt)}", "destination": "database"}]})


def test_record_then_replay_returns_identical_values(tmp_path):
    rec = record_replay_mode("record", provider=fn_gateway(_echo).provider, cache_dir=tmp_path / "c")
    first = rec.complete_structured("initial_questions", INIT, schemas.QUESTIONS)
    assert len(rec.cache) == 1
    rep = record_replay_mode("replay", cache_dir=tmp_path / "c")
    again = rep.complete_structured("initial_questions", INIT, schemas.QUESTIONS)
    assert again == first


def test_replay_miss_names_the_key(tmp_path):
    (tmp_path / "c").mkdir()
    rep = record_replay_mode("replay", cache_dir=tmp_path / "c")
    with pytest.raises(GatewayError, match="replay cache miss for key [0-9a-f]{64}"):
        rep.complete_text("summary_prompt", {"insights": "- a"})


def test_replay_requires_existing_cache_dir(tmp_path):
    with pytest.raises(GatewayError, match="does not exist"):
        record_replay_mode("replay", cache_dir=tmp_path / "missing")


def test_unknown_mode_rejected():
    with pytest.raises(GatewayError):
        Gateway(provider=ScriptedProvider({}), mode="turbo")


def test_http_provider_without_credentials(monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    with pytest.raises(ProviderConfigError, match="credentials"):
        build_provider({"kind": "http"})


def test_cache_key_depends_on_model_schema_and_prompt():
    base = cache_key("m1", "text", "p")
    assert base != cache_key("m2", "text", "p")
    assert base != cache_key("m1", "json", "p")
    assert base != cache_key("m1", "text", "p ")
    assert base == cache_key("m1", "text", "p")


def test_per_template_model_routing(tmp_path):
    seen = []
    gw = fn_gateway(lambda r: seen.append(r.model) or "ok")
    gw.models = {"default": "small", "summary_prompt": "large"}
    gw.complete_text("summary_prompt", {"insights": "- a"})
    gw.complete_text("atomic_breakdown", {"article": "a"})
    assert seen == ["large", "small"]


def test_cache_files_are_json_with_metadata(tmp_path):
    cache = ResponseCache(tmp_path)
    cache.put("ab" + "0" * 62, "hello", template_id="t", model="m", schema_id="text")
    data = json.loads(next(tmp_path.glob("*/*.json")).read_text())
    assert data["response"] == "hello" and data["template_id"] == "t"
    assert cache.get("ab" + "0" * 62) == "hello"
    assert cache.get("cd" + "0" * 62) is None


def test_scripted_match_entries_are_order_independent():
    gw = scripted({"summary_prompt": [{"match": "beta", "response": "B"}, {"match": "alpha", "response": "A"}]})
    assert gw.complete_text("summary_prompt", {"insights": "alpha"}) == "A"
    assert gw.complete_text("summary_prompt", {"insights": "beta"}) == "B"
