"""The eight acceptance criteria, each at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (visible even under capture), so

    pytest tests/test_acceptance.py -v

doubles as the acceptance report.
"""

from __future__ import annotations

import json
import math
import random
import re
import sqlite3
import time
from contextlib import contextmanager

import pytest

import factcheck_family as ff
from chaos import ChaosModel
from conftest import GOLDEN, TOPIC, db_from_rows, fn_gateway, make_db, scripted
from dbresearch import cli
from dbresearch.config import RunSettings, ResearchConfig
from dbresearch.data import Database, column_summaries, render_stats_block
from dbresearch.evaluation import SCORE_SET, Criterion, grade, insight_recall, parse_rating
from dbresearch.executor import Executor
from dbresearch.llm.gateway import CallableProvider, Gateway, record_replay_mode
from dbresearch.llm.heuristic import HeuristicModel
from dbresearch.llm.schemas import load_json
from dbresearch.llm.templates import TEMPLATES
from dbresearch.models import CitationKind, Destination, ExplorationQuestion, QueryRecord, ReportPlan, \
    SectionDraft, SectionSpec, word_count
from dbresearch.orchestrator import Orchestrator, consistency_pass, thesis_schedule
from dbresearch.report import CitationRegistry, build_packet, fact_check, minimal_edit_ok, revise_section
from dbresearch.store import RunStore
from dbresearch.web import FixtureSearchBackend
from oracles import counting_column_stats, recall_oracle, schedule_oracle


@pytest.fixture
def criterion(request, capsys):
    """Yields a reporter; prints PASS/FAIL for the criterion when the test ends."""
    state = {}

    @contextmanager
    def run(number: int, title: str):
        state["title"] = f"criterion {number}: {title}"
        try:
            yield
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nFAIL {state['title']} -- {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}")
            raise
        with capsys.disabled():
            print(f"\nPASS {state['title']}{state.get('detail', '')}")

    run.state = state
    return run


# ---- 1 and 6: golden replay ------------------------------------------------------

GOLDEN_RUNS = 5


@pytest.fixture(scope="module")
def golden_runs(tmp_path_factory):
    """Five replayed golden runs against a database freshly built from the CSV."""
    root = tmp_path_factory.mktemp("golden")
    dsn = root / "fresh.sqlite"
    assert cli.main(["ingest", str(GOLDEN / "toy_conflict.csv"), "--table", "events", "--dsn", str(dsn),
                     "--description", "One row per conflict event."]) == 0
    runs = []
    for k in range(GOLDEN_RUNS):
        out = root / f"run{k}"
        start = time.perf_counter()
        code = cli.main(["run", TOPIC, "--config", str(GOLDEN / "config.json"), "--mode", "replay",
                         "--cache", str(GOLDEN / "cache"), "--dsn", str(dsn), "--out", str(out)])
        runs.append((code, time.perf_counter() - start, out))
    return runs


def test_1_golden_replay_is_fast_and_byte_identical(golden_runs, criterion):
    with criterion(1, "golden replay, m=3 layers + report, <30 s, byte-identical x5"):
        assert [code for code, _, _ in golden_runs] == [0] * GOLDEN_RUNS
        slowest = max(t for _, t, _ in golden_runs)
        assert slowest < 30, f"slowest run took {slowest:.1f}s"
        reports = [(out / "report.md").read_bytes() for _, _, out in golden_runs]
        assert all(r == reports[0] for r in reports), "reports differ between runs"
        assert reports[0] == (GOLDEN / "expected_report.md").read_bytes(), "report differs from the fixture"
        record = RunStore(golden_runs[0][2]).load_run()
        assert record.aborted is None and len(record.layers) == 3 and len(record.banks) == 4
        criterion.state["detail"] = f" (slowest {slowest:.2f}s)"


_MARKER_GROUP = re.compile(r"\[(\d+(?:\s*,\s*\d+)*)\]")


def _integrity_problems(markdown: str, cap: int) -> list[str]:
    body, sep, appendix = markdown.partition("\n## Sources\n")
    problems = []
    if not sep:
        return ["no Sources appendix"]
    cited = {int(x) for g in _MARKER_GROUP.findall(body) for x in g.split(",")}
    listed = [int(m) for m in re.findall(r"^\[(\d+)\] ", appendix, re.MULTILINE)]
    if not cited:
        problems.append("no citation markers")
    if cited - set(listed):
        problems.append(f"unresolved markers {sorted(cited - set(listed))}")
    if listed != list(range(1, len(listed) + 1)):
        problems.append(f"appendix ids not dense/ascending: {listed}")
    if set(listed) - cited:
        problems.append(f"uncited appendix entries {sorted(set(listed) - cited)}")
    if word_count(body) > cap:
        problems.append(f"body has {word_count(body)} words > {cap}")
    if not re.search(r"^##\s+.*conclusion", body, re.IGNORECASE | re.MULTILINE):
        problems.append("no conclusion section")
    return problems


def test_6_report_integrity_on_every_golden_run(golden_runs, criterion):
    cap = RunSettings.load(GOLDEN / "config.json").research.report_word_cap
    with criterion(6, "report integrity (markers resolve, dense cited-only appendix, cap, conclusion)"):
        reports = [(GOLDEN / "expected_report.md").read_text()]
        reports += [(out / "report.md").read_text() for code, _, out in golden_runs if code == 0]
        assert len(reports) == GOLDEN_RUNS + 1
        for text in reports:
            assert _integrity_problems(text, cap) == []


def test_integrity_checker_catches_broken_reports():
    good = "## A\n\nX [1]. Y [2, 1].\n\n## Conclusion\n\nZ.\n\n## Sources\n\n[1] insight — a — b\n[2] web — c — d\n"
    assert _integrity_problems(good, 100) == []
    assert _integrity_problems(good.replace("[2, 1]", "[3]"), 100)
    assert _integrity_problems(good.replace("Y [2, 1]", "Y"), 100)
    assert _integrity_problems(good.replace("Conclusion", "Outlook"), 100)
    assert _integrity_problems(good, 5)


# ---- 2: statistics oracle ----------------------------------------------------

def _random_column(rng: random.Random, n: int) -> tuple[str, list]:
    kind = rng.choice(["int", "real", "text", "numtext", "mixed", "lowcard"])
    null_rate = rng.choice([0.0, 0.0, 0.05, 0.5, 1.0])

    def cell():
        if rng.random() < null_rate:
            return None
        k = kind if kind != "mixed" else rng.choice(["int", "real", "text"])
        if k == "int":
            return rng.randint(-10**rng.randint(1, 12), 10**rng.randint(1, 12))
        if k == "real":
            return rng.uniform(-1e6, 1e6) if rng.random() < 0.8 else float(rng.randint(-5, 5))
        if k == "numtext":
            return rng.choice(["1", "2.5", "-3", "1e3", " 7 ", "0.1"])
        if k == "lowcard":
            return rng.choice(["Mali", "Niger", "Chad"])
        return "".join(rng.choice("abcxyz ,;'\"") for _ in range(rng.randint(0, 12)))

    return kind, [cell() for _ in range(n)]


def test_2_column_summaries_match_full_scan_oracle(tmp_path, criterion):
    rng = random.Random(2024)
    path = tmp_path / "stats.sqlite"
    conn = sqlite3.connect(path)
    tables = []
    for t in range(1000):
        n = int(math.exp(rng.uniform(0, math.log(10_000))))  # log-uniform in [1, 10k]
        columns = [_random_column(rng, n)[1] for _ in range(rng.randint(1, 4))]
        names = [f"c{i}" for i in range(len(columns))]
        conn.execute(f"CREATE TABLE t{t} ({', '.join(names)})")  # no affinity: cells keep their type
        conn.executemany(f"INSERT INTO t{t} VALUES ({', '.join('?' * len(names))})", list(zip(*columns)))
        tables.append((f"t{t}", names))
    conn.commit()

    db = Database(str(path), row_limit=50)
    failures, checked = [], 0
    with criterion(2, "column_summaries == full-scan oracle on 1,000 random tables"):
        with db.session() as session:
            for table, names in tables:
                raw = conn.execute(f"SELECT {', '.join(names)} FROM {table}").fetchall()
                result = session.execute_sql(f"SELECT {', '.join(names)} FROM {table}", row_limit=50)
                assert len(result.rows) <= 50 and result.total_row_count == len(raw)
                for j, summary in enumerate(column_summaries(result)):
                    pct, top, numeric = counting_column_stats([r[j] for r in raw])
                    checked += 1
                    ok = abs(summary.distinct_pct - pct) <= 1e-12 and list(summary.top_values) == top
                    if numeric is None:
                        ok = ok and summary.numeric_stats is None
                    else:
                        got = summary.numeric_stats
                        ok = ok and got is not None and all(
                            math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9) for a, b in zip(got, numeric))
                    if not ok:
                        failures.append(f"{table}.{names[j]}")
        conn.close()
        assert not failures, f"{len(failures)} columns disagree, e.g. {failures[:5]}"
        criterion.state["detail"] = f" ({checked} columns)"


# ---- 3: layer invariants under adversarial scripts ------------------------------

@pytest.fixture(scope="module")
def chaos_db(tmp_path_factory):
    return make_db(tmp_path_factory.mktemp("chaos") / "toy.sqlite")


def test_3_layer_invariants_under_chaos(chaos_db, criterion):
    backend = FixtureSearchBackend.from_file(GOLDEN / "search_results.json")
    problems, aborted, turns_max = [], 0, 0
    with criterion(3, "200 adversarial behaviours: bank <= cap, thesis schedule, <= 15 turns, terminates"):
        start = time.perf_counter()
        for seed in range(200):
            rng = random.Random(seed)
            cfg = ResearchConfig(
                max_layers=rng.randint(1, 5), thesis_interval=rng.randint(1, 3), insight_cap=rng.randint(1, 12),
                first_layer_questions=rng.randint(1, 3), per_layer_questions=rng.randint(1, 5),
                max_workers=rng.choice([1, 4]), view_queries=rng.random() < 0.5, structured_retries=rng.randint(0, 2),
            )
            gw = Gateway(provider=CallableProvider(ChaosModel(seed)), mode="live", retries=cfg.structured_retries)
            record = Orchestrator(gw, chaos_db, cfg, search_backend=backend).run(TOPIC)
            aborted += record.aborted is not None
            schedule = schedule_oracle(cfg.max_layers, cfg.thesis_interval)
            if any(len(bank) > cfg.insight_cap for bank in record.banks):
                problems.append(f"seed {seed}: bank over cap")
            if [s.layer for s in record.layers] != list(range(1, len(record.layers) + 1)):
                problems.append(f"seed {seed}: layers out of order")
            if record.aborted is None and len(record.layers) != cfg.max_layers:
                problems.append(f"seed {seed}: finished with {len(record.layers)} layers")
            if any(s.thesis_event != schedule.get(s.layer) for s in record.layers):
                problems.append(f"seed {seed}: thesis events off schedule")
            if thesis_schedule(cfg.max_layers, cfg.thesis_interval) != schedule:
                problems.append(f"seed {seed}: schedule disagrees with oracle")
            made = [t.layer_produced for t in record.theses]
            if any(layer not in schedule for layer in made):
                problems.append(f"seed {seed}: thesis produced off schedule at {made}")
            turns = [t.turns for t in record.transcripts]
            turns_max = max([turns_max] + turns)
            if any(n > 15 for n in turns):
                problems.append(f"seed {seed}: transcript with {max(turns)} turns")
        elapsed = time.perf_counter() - start
        assert not problems, "; ".join(problems[:5])
        criterion.state["detail"] = f" ({aborted} aborted cleanly, max {turns_max} turns, {elapsed:.1f}s)"


# ---- 4: consistency-pass fidelity ------------------------------------------------

def _worked_example() -> tuple[dict, dict]:
    text = TEMPLATES["query_consistency_module"].body
    block_in = text.split("# input", 1)[1].split("# output", 1)[0]
    block_out = text.split("# output", 1)[1].split("# input", 1)[0]
    return load_json(block_in), block_out.strip()


@pytest.fixture
def actor_db(tmp_path):
    """Tables the example SQL can actually run against (``x IN table`` is valid SQLite)."""
    header = ["year", "region", "country", "sub_event_type", "actor1", "actor2", "assoc_actor_2"]
    rows = [
        [2025, "Middle East", "Syria", "Attack", "Islamic State (Syria)", "Civilians", ""],
        [2025, "Middle East", "Iraq", "Shelling/artillery/missile attack", "Military Forces of Iraq",
         "Islamic State (Iraq)", ""],
        [2025, "Middle East", "Iraq", "Attack", "ISIS cell", "Civilians", ""],
        [2024, "Middle East", "Syria", "Attack", "Islamic State (Syria)", "Civilians", ""],
    ]
    db = db_from_rows(tmp_path / "actors.sqlite", "event", header, rows)
    with db.session(create=True) as s:
        for name, col, values in [("events", None, None), ("ISISactor1", "actor1", ["ISIS cell"]),
                                  ("ISISactor2", "actor2", ["Islamic State (Iraq)"]),
                                  ("ISISassoc_actor_2", "assoc_actor_2", ["none"])]:
            csv = tmp_path / f"{name}.csv"
            if col is None:
                csv.write_text((tmp_path / "actors.csv").read_text())
            else:
                csv.write_text(col + "\n" + "\n".join(values) + "\n")
            s.ingest_csv(csv, name)
    return db


def test_4_consistency_worked_example(actor_db, criterion):
    nodes, literal_output = _worked_example()
    with criterion(4, "worked example: follow-up only for the under-filtered query, predicate applied"):
        assert list(nodes) == ["example_node_0", "query0", "query1"]
        assert "None" in literal_output and ",\n    }" in literal_output  # parsed as written, not cleaned up

        def rec(rid, node):
            return QueryRecord(id=rid, question=ExplorationQuestion(text=node["query"], destination=Destination.DATABASE),
                               sql=node["SQL"], answer="Result: 1 rows", layer=2)

        example = rec("L1Q1", nodes["example_node_0"])
        records = [rec("L2Q1", nodes["query0"]), rec("L2Q2", nodes["query1"])]
        gw = scripted({"query_consistency_module": [literal_output]})
        with actor_db.session() as s:
            columns = sorted({c.name for t in s.table_details([n for n, _ in s.get_tables()]) for c in t.columns})
        follow = consistency_pass(gw, records, [example], columns)
        assert follow == {"L2Q1": None,
                          "L2Q2": "Please include actor1 LIKE '%Islamic State%' in your SQL predicate."}
        assert '"example_node": true' in gw.calls[0].prompt

        executor = Executor(Gateway(provider=CallableProvider(HeuristicModel()), mode="live"), actor_db,
                            ResearchConfig())
        with actor_db.session() as s:
            s.execute_sql(records[1].sql)  # the original query runs as written
        revised, transcript = executor.apply_follow_up(records[1], follow["L2Q2"])
        assert revised.revised_sql and "actor1 LIKE '%Islamic State%'" in revised.revised_sql
        assert revised.follow_up == follow["L2Q2"] and transcript.turns <= 15


# ---- 5: fact-check pipeline ------------------------------------------------------

def test_5_factcheck_family(criterion):
    fixtures = ff.family(20)
    flagged = exact = clean_after = untouched = 0
    with criterion(5, "20 planted fabrications: 20/20 flagged, minimal revision, clean re-check"):
        gw = fn_gateway(ff.judge_and_reviser)
        for fx in fixtures:
            reg = CitationRegistry()
            for i in range(1, 6):
                reg.add(CitationKind.INSIGHT, fx.sources[i], f"I{i}")
            spec = SectionSpec(section_id="s", heading="h", must_include_evidence_ids=(1, 2, 3, 4, 5))
            draft = SectionDraft(section_id="s", heading="h", body=fx.body, used_citations=(1, 2, 3, 4, 5))
            crits = fact_check(gw, draft, reg)
            oracle_flags = [s for s in fx.sentences if not ff.containment_entails(s, fx.sources[int(s[-3])])]
            flagged += fx.planted in [c.original_sentence for c in crits]
            exact += [c.original_sentence for c in crits] == oracle_flags == [fx.planted]
            out = revise_section(gw, "t", None, ReportPlan(sections=(spec,)), spec, build_packet(spec, reg),
                                 draft, crits, reg)
            kept = [s for s in fx.sentences if s != fx.planted]
            untouched += all(s in out.body for s in kept) and fx.planted not in out.body \
                and minimal_edit_ok(draft.body, out.body, [fx.planted]) and not out.flags
            clean_after += fact_check(gw, out, reg) == []
        n = len(fixtures)
        assert (flagged, exact, untouched, clean_after) == (n, n, n, n), \
            f"flagged {flagged}, exact {exact}, untouched {untouched}, clean {clean_after} of {n}"


# ---- 7: evaluation contracts -----------------------------------------------------

def _fuzz_case(rng: random.Random) -> tuple[str, int]:
    noise_chars = "abc XYZ<>/=:0123456789\n.,"
    def noise():
        return "".join(rng.choice(noise_chars) for _ in range(rng.randint(0, 40))).replace("<rating>", "<r>")
    value = rng.randint(1, 10)
    decoys = ["", "rating: 3 ", "<rating>11</rating> ", "<rating>0</rating>", "<rating>x</rating>",
              "<rating>7.5</rating>", "<rating></rating>", "Rating 9/10. "]
    shown = str(value) if rng.random() < 0.8 else f"{value}.0"
    text = noise() + rng.choice(decoys) + noise() + f"<rating>{shown}</rating>" + noise()
    return text, value


def test_7_evaluation_contracts(criterion):
    crits = [Criterion(f"Criterion {k}", "d") for k in range(4)]
    rng = random.Random(7)
    with criterion(7, "score set closed, rating parser 10,000/10,000, 3x3 recall matrix"):
        # (a) only {0, .25, .5, .75, 1} ever comes back, whatever the judge says
        wild = list(SCORE_SET) + [0.3, -1, 2, 0.74, 1.01]
        for _ in range(300):
            reply = json.dumps({"criterion_scores": [{"name": c.name, "score": rng.choice(wild)} for c in crits]})
            res = grade(scripted({"criteria_matching_grade": [reply] * 3}), "a", crits, "t", retries=2)
            assert all(s is None or s.score in SCORE_SET for s in res.scores)

        # (b) rating parser fuzz
        cases = [_fuzz_case(rng) for _ in range(10_000)]
        wrong = [(t, v) for t, v in cases if parse_rating(t) != v]
        assert not wrong, f"{len(wrong)} misparsed, e.g. {wrong[0][0]!r}"

        # (c) hand-built 3x3 judge matrix; expected values worked out by hand:
        #   g1: max(2, 9, 4)  = 9  -> 0.9
        #   g2: max(7, 7, 1)  = 7  -> 0.7
        #   g3: max(3, 5, 10) = 10 -> 1.0
        #   mean = (0.9 + 0.7 + 1.0) / 3 = 2.6 / 3
        matrix = {"g1": [2, 9, 4], "g2": [7, 7, 1], "g3": [3, 5, 10]}

        def judge(req):
            pred = req.prompt.split("Provided Answer:\n", 1)[1].split("\n", 1)[0]
            gold = next(g for g in matrix if f"\n{g}\n" in req.prompt.split("Ground Truth Answer:", 1)[1] + "\n")
            return f"Considering both... <rating>{matrix[gold][int(pred[1]) - 1]}</rating>"

        res = insight_recall(fn_gateway(judge), ["p1", "p2", "p3"], ["g1", "g2", "g3"])
        assert res.ratings == [[2, 9, 4], [7, 7, 1], [3, 5, 10]]
        assert res.per_gold == [0.9, 0.7, 1.0]
        assert res.mean == pytest.approx(2.6 / 3, abs=1e-12)
        assert (res.per_gold, res.mean) == recall_oracle(res.ratings)


# ---- 8: executor answer/query consistency ---------------------------------------

def _questions() -> list[str]:
    dims = ["country", "year", "event_type", "region", "actor1"]
    measures = ["", "total fatalities ", "average fatalities "]
    filters = ["", " where country is 'Mali'", " where year is '2022'", " where event_type is 'Battles'"]
    out = []
    for d in dims:
        for m in measures:
            for f in filters:
                out.append(f"What is the {m or 'number of events '}for each {d}{f}?".replace("  ", " "))
    return out[:50]


def test_8_replayed_answers_match_reexecuted_sql(tmp_path, criterion):
    db = make_db(tmp_path / "toy.sqlite")
    cache = tmp_path / "cache"
    questions = _questions()
    assert len(questions) == 50
    cfg = ResearchConfig()

    def answer_all(gateway):
        ex = Executor(gateway, db, cfg)
        return [ex.answer_question(ExplorationQuestion(text=q, destination=Destination.DATABASE),
                                   record_id=f"Q{i}")[0] for i, q in enumerate(questions)]

    with criterion(8, "50 replayed questions: re-executed SQL regenerates the embedded stats block"):
        recorded = answer_all(record_replay_mode("record", provider=CallableProvider(HeuristicModel()),
                                                 cache_dir=cache))
        replayed = answer_all(record_replay_mode("replay", cache_dir=cache))
        assert replayed == recorded
        mismatched = []
        with db.session() as s:
            for rec in replayed:
                assert rec.answered and rec.final_sql, rec.flags
                block = render_stats_block(column_summaries(s.execute_sql(rec.final_sql)))
                if block not in rec.final_answer or block != render_stats_block(rec.summaries):
                    mismatched.append(rec.id)
        assert not mismatched, f"stats differ for {mismatched}"
