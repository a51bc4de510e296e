import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dbresearch.config import ResearchConfig
from dbresearch.data import Database
from dbresearch.llm.gateway import CallableProvider, Gateway, ScriptedProvider
from dbresearch.llm.heuristic import HeuristicModel

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "fixtures" / "golden"
EVAL = ROOT / "fixtures" / "eval"
TOPIC = (GOLDEN / "topic.txt").read_text().strip()


def make_db(path, csv_path=GOLDEN / "toy_conflict.csv", table="events", **kw) -> Database:
    db = Database(str(path), **kw)
    with db.session(create=True) as s:
        s.ingest_csv(csv_path, table)
    return db


def db_from_rows(path, table, header, rows, **kw) -> Database:
    csv_path = Path(path).with_suffix(".csv")
    lines = [",".join(header)] + [",".join("" if v is None else str(v) for v in r) for r in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    return make_db(path, csv_path, table, **kw)


@pytest.fixture
def toy_db(tmp_path) -> Database:
    return make_db(tmp_path / "toy.sqlite")


@pytest.fixture
def heuristic() -> Gateway:
    return Gateway(provider=CallableProvider(HeuristicModel()), mode="live")


def scripted(script: dict, retries: int = 3) -> Gateway:
    return Gateway(provider=ScriptedProvider(script), mode="live", retries=retries)


def fn_gateway(fn, retries: int = 3) -> Gateway:
    return Gateway(provider=CallableProvider(fn), mode="live", retries=retries)


def small_config(**kw) -> ResearchConfig:
    base = dict(max_layers=2, thesis_interval=1, insight_cap=10, max_workers=2)
    base.update(kw)
    return ResearchConfig(**base)


def j(obj) -> str:
    return json.dumps(obj)
