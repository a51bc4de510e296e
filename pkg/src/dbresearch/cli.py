"""Command line entry point: ``dbresearch {ingest,run,eval,serve}``.

Exit codes
    0  success
    2  bad input: arguments, config, unreadable files, ingestion errors, missing replay cache
    3  missing provider or search credentials
    4  exploration aborted (partial run record is still written)
    5  report generation failed after a completed exploration
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunSettings, validate_config
from .data import Database, DatabaseError, IngestError
from .evaluation import (
    db_use_ratio,
    derive_criteria,
    grade,
    insight_recall,
    load_gold,
    load_predicted,
    load_race_scores,
    summarize,
    summary_score,
)
from .executor import Executor
from .llm.gateway import (
    Gateway,
    GatewayError,
    ProviderConfigError,
    build_provider,
    record_replay_mode,
)
from .orchestrator import Orchestrator
from .report import generate_report
from .store import RunStore, write_text
from .web import (
    CachedSearchBackend,
    SearchBackend,
    SearchCredentialsError,
    SearchError,
    build_search_backend,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CREDENTIALS = 3
EXIT_EXPLORATION = 4
EXIT_REPORT = 5

logger = logging.getLogger("dbresearch")


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---- shared setup ----------------------------------------------------------

def load_settings(args: argparse.Namespace) -> RunSettings:
    if not getattr(args, "config", None):
        settings = RunSettings()
    else:
        try:
            settings = RunSettings.load(args.config)
        except FileNotFoundError:
            raise CLIError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"config is not valid JSON: {exc}") from None
        except ConfigError as exc:
            raise CLIError(f"invalid config field {exc.field!r}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise CLIError(f"invalid config: {exc}") from None
        if settings.dsn and "://" not in settings.dsn and settings.dsn != ":memory:":
            dsn = Path(settings.dsn)
            if not dsn.is_absolute():
                settings = replace(settings, dsn=str((Path(args.config).parent / dsn).resolve()))
    overrides = {}
    if getattr(args, "blocklist", None):
        overrides["blocked_domains"] = frozenset(d.strip().lower() for d in args.blocklist.split(",") if d.strip())
    if getattr(args, "cutoff", None):
        try:
            overrides["search_date_cutoff"] = dt.date.fromisoformat(args.cutoff)
        except ValueError:
            raise CLIError(f"--cutoff must be YYYY-MM-DD, got {args.cutoff!r}") from None
    if overrides:
        try:
            research = validate_config(settings.research.with_overrides(**overrides))
        except ConfigError as exc:
            raise CLIError(f"invalid config field {exc.field!r}: {exc}") from None
        settings = replace(settings, research=research)
    return settings


def make_gateway(settings: RunSettings, mode: str, cache_dir: Path | None) -> Gateway:
    provider = None
    if mode != "replay":
        try:
            provider = build_provider(settings.provider)
        except ProviderConfigError as exc:
            code = EXIT_CREDENTIALS if "credentials" in str(exc) else EXIT_INPUT
            raise CLIError(str(exc), code) from None
        except (KeyError, OSError, ValueError) as exc:
            raise CLIError(f"cannot build provider: {exc}") from None
    try:
        return record_replay_mode(
            mode, provider=provider, cache_dir=cache_dir if mode != "live" else None,
            models=settings.models, retries=settings.research.structured_retries,
        )
    except GatewayError as exc:
        raise CLIError(str(exc)) from None


def make_search(settings: RunSettings, mode: str, gateway: Gateway) -> SearchBackend:
    base = None
    if mode != "replay":
        try:
            base = build_search_backend(settings.search)
        except SearchCredentialsError as exc:
            raise CLIError(str(exc), EXIT_CREDENTIALS) from None
        except (SearchError, KeyError, OSError, ValueError) as exc:
            raise CLIError(f"cannot build search backend: {exc}") from None
    if mode == "live":
        return base
    return CachedSearchBackend(base, gateway.cache, mode)


def make_database(settings: RunSettings, args: argparse.Namespace) -> Database:
    dsn = getattr(args, "dsn", None) or settings.dsn
    if not dsn:
        raise CLIError("no database: pass --dsn or set \"dsn\" in the config")
    r = settings.research
    return Database(dsn, row_limit=r.result_row_limit, cell_char_limit=r.cell_char_limit)


# ---- commands --------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    db = Database(args.dsn)
    try:
        session = db.session(create=True)
    except DatabaseError as exc:
        raise CLIError(str(exc)) from None
    try:
        n = session.ingest_csv(args.csv_path, args.table, args.description)
    except IngestError as exc:
        raise CLIError(str(exc)) from None
    finally:
        session.close()
    print(f"ingested {n} rows into {args.table}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    out = Path(args.out)
    cache_dir = Path(args.cache) if args.cache else out / "cache"
    gateway = make_gateway(settings, args.mode, cache_dir)
    backend = make_search(settings, args.mode, gateway)
    database = make_database(settings, args)
    store = RunStore(out)
    store.save_config(settings.to_dict())

    orchestrator = Orchestrator(
        gateway, database, settings.research, search_backend=backend, store=store,
        db_description=settings.db_description,
        on_event=lambda event, data: logger.info("%s %s", event, data),
    )
    record = orchestrator.run(args.topic, resume=not args.no_resume)
    if record.aborted:
        print(f"exploration aborted: {record.aborted}", file=sys.stderr)
        return EXIT_EXPLORATION
    try:
        final = generate_report(record, gateway, settings.research, backend, store)
    except (GatewayError, SearchError, ValueError) as exc:
        store.write_json("report/error.json", {"error": f"{type(exc).__name__}: {exc}"})
        print(f"report generation failed: {exc}", file=sys.stderr)
        return EXIT_REPORT
    write_text(out / "report.md", final.markdown)
    write_text(out / "citations.json", final.citations_json())
    store.touch_metadata()
    print(f"wrote {out / 'report.md'} ({final.word_count} words, {len(final.citations)} sources)")
    return EXIT_OK


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}") from None


def cmd_eval(args: argparse.Namespace) -> int:
    if not (args.article and args.reference) and not (args.predicted and args.gold) and not args.race:
        raise CLIError("need --article with --reference, and/or --predicted with --gold, and/or --race")
    if args.reference and not args.article:
        raise CLIError("--reference requires --article")
    if bool(args.predicted) != bool(args.gold):
        raise CLIError("--predicted and --gold go together")
    article = _read(args.article) if args.article else None
    reference = _read(args.reference) if args.reference else None
    try:
        gold = load_gold(args.gold) if args.gold else None
        predicted = load_predicted(args.predicted) if args.predicted else None
        race = load_race_scores(args.race) if args.race else None
    except (OSError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise CLIError(f"cannot read evaluation inputs: {exc}") from None

    scores: dict = {}
    if race is not None:
        scores["race"] = race
    if article is not None or predicted is not None:
        settings = load_settings(args)
        gateway = make_gateway(settings, args.mode, Path(args.cache) if args.cache else None)
        task = args.task or args.topic or ""
        try:
            if article is not None and reference is not None:
                criteria = derive_criteria(gateway, reference, task)
                graded = grade(gateway, article, criteria, task)
                scores["criteria"] = {
                    "mean": graded.mean,
                    "scores": [
                        {"name": c.name, "score": s.score if s else None, "explanation": s.explanation if s else ""}
                        for c, s in zip(criteria, graded.scores)
                    ],
                    "flags": graded.flags + [f for c in criteria for f in c.flags],
                }
                attribution = db_use_ratio(gateway, article, args.topic or task)
                scores["db_use_ratio"] = {
                    "ratio": attribution.ratio,
                    "claims": [{"text": c.text, "attribution": c.attribution} for c in attribution.claims],
                    "flags": attribution.flags,
                }
            if predicted is not None and gold is not None:
                if not predicted or not gold.insights:
                    raise CLIError("predicted and gold insight lists must be non-empty")
                recall = insight_recall(gateway, predicted, gold.insights)
                scores["insight_recall"] = {
                    "mean": recall.mean, "per_gold": recall.per_gold, "ratings": recall.ratings,
                    "flags": recall.flags,
                }
                if gold.summary:
                    generated = summarize(gateway, predicted)
                    s = summary_score(gateway, generated, gold.summary)
                    scores["summary_recall"] = {"score": s.mean, "summary": generated, "flags": s.flags}
        except GatewayError as exc:
            raise CLIError(f"judge failed: {exc}") from None
    text = json.dumps(scores, indent=2, sort_keys=True) + "\n"
    if args.out:
        write_text(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import make_server

    settings = load_settings(args)
    cache_dir = Path(args.cache) if args.cache else None
    gateway = make_gateway(settings, args.mode, cache_dir)
    database = make_database(settings, args)
    try:
        database.ping()
    except DatabaseError as exc:
        raise CLIError(f"database unreachable: {exc}") from None
    executor = Executor(gateway, database, settings.research)
    server = make_server(executor, database, args.host, args.port)
    print(f"serving executor on http://{args.host}:{server.server_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbresearch", description="Deep research over a database and the web.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a CSV into a new table")
    p.add_argument("csv_path")
    p.add_argument("--table", required=True)
    p.add_argument("--dsn", required=True)
    p.add_argument("--description", default=None)
    p.set_defaults(func=cmd_ingest)

    def model_flags(p, default_mode="live"):
        p.add_argument("--config")
        p.add_argument("--mode", choices=("live", "record", "replay"), default=default_mode)
        p.add_argument("--cache", help="response cache directory")

    p = sub.add_parser("run", help="explore, then write a report")
    p.add_argument("topic")
    model_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--dsn")
    p.add_argument("--blocklist", help="comma-separated domains to exclude from search")
    p.add_argument("--cutoff", help="drop search results dated on or after YYYY-MM-DD")
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score an article and/or predicted insights")
    model_flags(p)
    p.add_argument("--article")
    p.add_argument("--reference")
    p.add_argument("--predicted")
    p.add_argument("--gold")
    p.add_argument("--race", help="external RACE scores file, reported as-is")
    p.add_argument("--task", default="")
    p.add_argument("--topic", default="")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the executor agent over JSON-RPC")
    model_flags(p)
    p.add_argument("--dsn")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
