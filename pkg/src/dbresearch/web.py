"""Web retrieval with leakage controls and the warm-start phase.

Leakage controls are applied here, after the backend returns: blocked hosts
(suffix match) are dropped, and when a cutoff date is configured so are results
published on or after it. Results with unknown dates are kept and flagged.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol
from urllib.parse import urlparse

from pydantic import BaseModel, ConfigDict, field_validator

from .config import ResearchConfig
from .llm import schemas
from .llm.gateway import Gateway, ReplayCacheMiss, ResponseCache, cache_key
from .models import Insight, Provenance, WarmStartOutput

logger = logging.getLogger(__name__)

PAGE_CHAR_LIMIT = 8000


class SearchError(RuntimeError):
    pass


class SearchCredentialsError(SearchError):
    pass


class SearchResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    url: str
    title: str = ""
    snippet: str = ""
    published: dt.date | None = None
    page_text: str | None = None
    date_unknown: bool = False

    @field_validator("url")
    @classmethod
    def _well_formed(cls, v: str) -> str:
        parsed = urlparse(v)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"malformed url: {v!r}")
        return v

    @property
    def host(self) -> str:
        return (urlparse(self.url).hostname or "").lower()


class SearchBackend(Protocol):
    def search(self, query: str) -> list[SearchResult]: ...


def _coerce_date(value: Any) -> dt.date | None:
    if value in (None, ""):
        return None
    if isinstance(value, dt.date):
        return value
    text = str(value).strip()
    for fmt in ("%Y-%m-%d", "%d %B %Y", "%b %d, %Y", "%B %d, %Y", "%d %b %Y"):
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    return None


def _result_from(raw: Mapping[str, Any]) -> SearchResult | None:
    try:
        return SearchResult(
            url=raw.get("url") or raw.get("link", ""),
            title=raw.get("title", ""),
            snippet=raw.get("snippet", ""),
            published=_coerce_date(raw.get("published") or raw.get("date")),
            page_text=raw.get("page_text"),
        )
    except ValueError:
        return None


class FixtureSearchBackend:
    """Serves results from a JSON file ``{query: [result, ...]}``; unknown queries yield []."""

    def __init__(self, results: Mapping[str, list[Mapping[str, Any]]]):
        self.results = {k: list(v) for k, v in results.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureSearchBackend":
        return cls(json.loads(Path(path).read_text()))

    def search(self, query: str) -> list[SearchResult]:
        out = []
        for raw in self.results.get(query, []):
            result = _result_from(raw)
            if result is not None:
                out.append(result)
        return out


class SerperSearchBackend:
    """Google results via serper.dev (``SERPER_API_KEY``)."""

    def __init__(self, api_key_env: str = "SERPER_API_KEY", num: int = 8, timeout: float = 30.0):
        key = os.environ.get(api_key_env)
        if not key:
            raise SearchCredentialsError(f"no search credentials: set {api_key_env}")
        self.api_key, self.num, self.timeout = key, num, timeout

    def search(self, query: str) -> list[SearchResult]:
        import httpx

        try:
            resp = httpx.post(
                "https://google.serper.dev/search",
                headers={"X-API-KEY": self.api_key},
                json={"q": query, "num": self.num},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            organic = resp.json().get("organic", [])
        except (httpx.HTTPError, ValueError) as exc:
            raise SearchError(f"search failed: {exc}") from exc
        return [r for r in map(_result_from, organic) if r is not None]


class NullSearchBackend:
    def search(self, query: str) -> list[SearchResult]:
        return []


class CachedSearchBackend:
    """Record/replay wrapper so search responses are as reproducible as model calls."""

    def __init__(self, backend: SearchBackend | None, cache: ResponseCache, mode: str):
        self.backend, self.cache, self.mode = backend, cache, mode

    def search(self, query: str) -> list[SearchResult]:
        key = cache_key("search", query)
        if self.mode in ("record", "replay"):
            hit = self.cache.get(key)
            if hit is not None:
                return [SearchResult.model_validate(r) for r in json.loads(hit)]
            if self.mode == "replay":
                raise ReplayCacheMiss(key)
        results = self.backend.search(query)
        if self.mode == "record":
            payload = json.dumps([r.model_dump(mode="json") for r in results])
            self.cache.put(key, payload, template_id="search")
        return results


def build_search_backend(spec: Mapping[str, Any]) -> SearchBackend:
    kind = spec.get("kind", "none")
    if kind == "fixture":
        return FixtureSearchBackend.from_file(spec["path"])
    if kind == "serper":
        return SerperSearchBackend(api_key_env=spec.get("api_key_env", "SERPER_API_KEY"))
    if kind == "none":
        return NullSearchBackend()
    raise SearchError(f"unknown search backend {kind!r}")


def is_blocked(host: str, blocked: Iterable[str]) -> bool:
    host = host.lower().rstrip(".")
    return any(host == d or host.endswith("." + d) for d in blocked)


def search(query: str, config: ResearchConfig, backend: SearchBackend) -> list[SearchResult]:
    """Query the backend and apply the blocklist and publication cutoff."""
    if not query or not query.strip():
        raise SearchError("empty query")
    out = []
    for result in backend.search(query.strip()):
        if is_blocked(result.host, config.blocked_domains):
            continue
        if result.published is None:
            if config.search_date_cutoff is not None:
                result = result.model_copy(update={"date_unknown": True})
        elif config.search_date_cutoff is not None and result.published >= config.search_date_cutoff:
            continue
        if result.page_text and len(result.page_text) > PAGE_CHAR_LIMIT:
            result = result.model_copy(update={"page_text": result.page_text[:PAGE_CHAR_LIMIT]})
        out.append(result)
    return out


def format_results(results: Iterable[SearchResult], with_pages: bool = False) -> str:
    blocks = []
    for i, r in enumerate(results, 1):
        date = r.published.isoformat() if r.published else "unknown date"
        block = f"[{i}] {r.title} ({r.url}, {date})\n{r.snippet}"
        if with_pages and r.page_text:
            block += f"\n{r.page_text}"
        blocks.append(block)
    return "\n\n".join(blocks)


class WarmStartAdapter(Protocol):
    """Anything mapping a topic to a preliminary report and initial insights."""

    def run(self, topic: str) -> WarmStartOutput: ...


class SearchSummarizeWarmStart:
    """Built-in warm start: plan 3-8 searches, run them, synthesise a report."""

    def __init__(self, gateway: Gateway, backend: SearchBackend, config: ResearchConfig):
        self.gateway, self.backend, self.config = gateway, backend, config

    def run(self, topic: str) -> WarmStartOutput:
        plan = self.gateway.complete_structured(
            "warmstart_queries", {"topic": topic}, schemas.SEARCH_QUERIES
        )
        queries = [q.strip() for q in plan.queries if q.strip()][:8]
        with ThreadPoolExecutor(max_workers=self.config.max_workers) as pool:
            per_query = list(pool.map(lambda q: search(q, self.config, self.backend), queries))
        merged, seen = [], set()
        for results in per_query:  # (query index, rank) order
            for r in results:
                if r.url not in seen:
                    seen.add(r.url)
                    merged.append(r)
        if not merged:
            logger.warning("warm start: no search results for %r", topic)
            return WarmStartOutput(report=f"# {topic}\n\nNo background sources were found.", degraded=True)
        synth = self.gateway.complete_structured(
            "warmstart_report",
            {"topic": topic, "results": format_results(merged, with_pages=True)},
            schemas.Schema("warmstart_report", _validate_warm_report),
        )
        insights = tuple(
            Insight(id=f"W{i}", text=text.strip(), provenance=Provenance.WARMSTART, layer_created=0)
            for i, text in enumerate(synth.insights[:15], 1)
        )
        return WarmStartOutput(report=synth.report_markdown, insights=insights)


def _validate_warm_report(text: str):
    out = schemas.WARM_REPORT.parse(text)
    insights = [i for i in out.insights if i.strip()]
    if len(insights) < 5:
        raise schemas.SchemaViolation("insights: provide at least 5 non-empty insights")
    sections = [ln for ln in out.report_markdown.splitlines() if ln.startswith("## ")]
    if len(sections) < 2:
        raise schemas.SchemaViolation('report_markdown: include at least two "## " sections')
    return out.model_copy(update={"insights": insights})


def warm_start(topic: str, adapter: WarmStartAdapter) -> WarmStartOutput:
    """Run any adapter and re-validate its output against the warm-start contract."""
    out = adapter.run(topic)
    return WarmStartOutput.model_validate(out.model_dump())


def internet_answer(
    gateway: Gateway, question: str, topic: str, config: ResearchConfig, backend: SearchBackend
) -> str | None:
    """Search, then one summarisation call. ``None`` when nothing survives filtering."""
    results = search(question, config, backend)
    if not results:
        return None
    out = gateway.complete_structured(
        "internet_answer",
        {"question": question, "topic": topic, "results": format_results(results[:5])},
        schemas.INTERNET_ANSWER,
    )
    return out.answer.strip() or None
