import json
import shutil

import pytest

from conftest import EVAL, GOLDEN, TOPIC
from dbresearch import cli


def _config(tmp_path, **over):
    cfg = json.loads((GOLDEN / "config.json").read_text())
    cfg["dsn"] = str(GOLDEN / "toy_conflict.sqlite")
    cfg["search"]["path"] = str(GOLDEN / "search_results.json")
    for key, value in over.items():
        cfg[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(tmp_path, config, *extra, mode="record"):
    return cli.main(["run", TOPIC, "--config", config, "--mode", mode, "--cache", str(tmp_path / "cache"),
                     "--out", str(tmp_path / "out"), "--no-resume", *extra])


# ---- ingest ----------------------------------------------------------------

def test_ingest_ok_then_collision(tmp_path, capsys):
    dsn = str(tmp_path / "db.sqlite")
    args = ["ingest", str(GOLDEN / "toy_conflict.csv"), "--table", "events", "--dsn", dsn]
    assert cli.main(args) == 0
    assert "ingested" in capsys.readouterr().out
    assert cli.main(args) == 2


def test_ingest_missing_csv(tmp_path):
    assert cli.main(["ingest", str(tmp_path / "nope.csv"), "--table", "t", "--dsn", str(tmp_path / "d.sqlite")]) == 2


# ---- run exit codes ----------------------------------------------------------

def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(tmp_path, str(bad)) == 2
    bad.write_text(json.dumps({"research": {"insight_cap": 0}}))
    assert _run(tmp_path, str(bad)) == 2
    assert _run(tmp_path, str(tmp_path / "missing.json")) == 2


def test_bad_cutoff_exits_2(tmp_path):
    assert _run(tmp_path, _config(tmp_path), "--cutoff", "yesterday") == 2


def test_missing_provider_credentials_exit_3(tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    assert _run(tmp_path, _config(tmp_path, provider={"kind": "http"})) == 3


def test_missing_search_credentials_exit_3(tmp_path, monkeypatch):
    monkeypatch.delenv("SERPER_API_KEY", raising=False)
    assert _run(tmp_path, _config(tmp_path, search={"kind": "serper"})) == 3


def test_unreachable_database_exits_4_and_keeps_partial_record(tmp_path):
    code = _run(tmp_path, _config(tmp_path, dsn=str(tmp_path / "no_such_dir" / "db.sqlite")))
    assert code == 4
    assert any((tmp_path / "out").rglob("*.json"))


def test_replay_without_cache_exits_2(tmp_path):
    assert _run(tmp_path, _config(tmp_path), mode="replay") == 2


def test_report_failure_exits_5(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ValueError("draft rejected")

    monkeypatch.setattr(cli, "generate_report", boom)
    assert _run(tmp_path, _config(tmp_path)) == 5
    assert "draft rejected" in (tmp_path / "out" / "report" / "error.json").read_text()


def test_replay_of_golden_cache(tmp_path):
    cache = tmp_path / "cache"
    shutil.copytree(GOLDEN / "cache", cache)
    assert _run(tmp_path, str(GOLDEN / "config.json"), mode="replay") == 0
    out = tmp_path / "out"
    assert (out / "report.md").read_text() == (GOLDEN / "expected_report.md").read_text()
    assert json.loads((out / "citations.json").read_text())


# ---- eval ------------------------------------------------------------------

def test_eval_writes_json(tmp_path, capsys):
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps(["Burkina Faso has the most conflict events.", "2021 is the peak year."]))
    out = tmp_path / "scores.json"
    code = cli.main(["eval", "--config", str(EVAL / "judge_config.json"), "--predicted", str(pred),
                     "--gold", str(EVAL / "gold_insights.json"), "--out", str(out)])
    assert code == 0
    scores = json.loads(out.read_text())
    assert 0 <= scores["insight_recall"]["mean"] <= 1 and len(scores["insight_recall"]["per_gold"]) == 3
    assert "summary_recall" in scores
    assert json.loads(capsys.readouterr().out) == scores


def test_eval_argument_errors(tmp_path):
    assert cli.main(["eval"]) == 2
    assert cli.main(["eval", "--predicted", "p.json"]) == 2
    assert cli.main(["eval", "--reference", str(EVAL / "reference.md")]) == 2


def test_eval_race_passthrough(tmp_path, capsys):
    race = tmp_path / "race.json"
    race.write_text(json.dumps({"overall": 0.41}))
    assert cli.main(["eval", "--race", str(race)]) == 0
    assert json.loads(capsys.readouterr().out) == {"race": {"overall": 0.41}}


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
