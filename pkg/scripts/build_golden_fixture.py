"""Rebuild the golden replay fixture.

Ingests the toy CSV into a fresh SQLite file, records a full run with the
heuristic model into fixtures/golden/cache, then replays it once and stores
the report as fixtures/golden/expected_report.md.
"""

import argparse
import filecmp
import shutil
import sys
import tempfile
from pathlib import Path

from dbresearch.cli import main as cli
from dbresearch.data import Database

GOLDEN = Path(__file__).resolve().parents[1] / "fixtures" / "golden"


def build_database(csv_path: Path, db_path: Path) -> None:
    db_path.unlink(missing_ok=True)
    session = Database(str(db_path)).session(create=True)
    try:
        session.ingest_csv(csv_path, "events", "One row per conflict event.")
    finally:
        session.close()


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--golden", default=str(GOLDEN))
    args = ap.parse_args()
    golden = Path(args.golden)
    topic = (golden / "topic.txt").read_text().strip()
    build_database(golden / "toy_conflict.csv", golden / "toy_conflict.sqlite")
    cache = golden / "cache"
    shutil.rmtree(cache, ignore_errors=True)
    with tempfile.TemporaryDirectory() as tmp:
        rec, rep = Path(tmp, "record"), Path(tmp, "replay")
        code = cli(["run", topic, "--config", str(golden / "config.json"), "--mode", "record",
                    "--cache", str(cache), "--out", str(rec), "--no-resume"])
        if code:
            print(f"record run failed with exit code {code}", file=sys.stderr)
            return code
        code = cli(["run", topic, "--config", str(golden / "config.json"), "--mode", "replay",
                    "--cache", str(cache), "--out", str(rep), "--no-resume"])
        if code:
            print(f"replay run failed with exit code {code}", file=sys.stderr)
            return code
        if not filecmp.cmp(rec / "report.md", rep / "report.md", shallow=False):
            print("record and replay reports differ", file=sys.stderr)
            return 1
        shutil.copyfile(rep / "report.md", golden / "expected_report.md")
        shutil.copyfile(rep / "citations.json", golden / "expected_citations.json")
    print(f"golden fixture rebuilt: {len(list(cache.glob('*/*.json')))} cached responses")
    return 0


if __name__ == "__main__":
    sys.exit(main())
