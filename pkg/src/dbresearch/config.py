"""Run configuration: the free parameters of the exploration loop and report stages."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration value violates a constraint.

    ``field`` names the offending attribute so callers (the CLI in particular)
    can report it without parsing the message.
    """

    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


@dataclass(frozen=True)
class ResearchConfig:
    max_layers: int = 5
    first_layer_questions: int = 2
    per_layer_questions: int = 5
    thesis_interval: int = 2
    insight_cap: int = 30
    executor_turn_cap: int = 15
    result_row_limit: int = 50
    cell_char_limit: int = 200
    report_word_cap: int = 3000
    section_word_cap: int = 700
    search_date_cutoff: dt.date | None = None
    blocked_domains: frozenset[str] = field(default_factory=frozenset)
    # view-query channel (SELECT * slices summarised for inductive surfacing)
    view_queries: bool = False
    view_query_budget: int = 2
    structured_retries: int = 3
    max_workers: int = 4
    renumber_citations: bool = True

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["search_date_cutoff"] = (
            self.search_date_cutoff.isoformat() if self.search_date_cutoff else None
        )
        data["blocked_domains"] = sorted(self.blocked_domains)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ResearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], f"unknown config field: {unknown[0]}")
        kwargs = dict(data)
        cutoff = kwargs.get("search_date_cutoff")
        if isinstance(cutoff, str):
            try:
                kwargs["search_date_cutoff"] = dt.date.fromisoformat(cutoff)
            except ValueError as exc:
                raise ConfigError("search_date_cutoff", f"search_date_cutoff: {exc}") from None
        if "blocked_domains" in kwargs:
            kwargs["blocked_domains"] = frozenset(
                d.strip().lower() for d in kwargs["blocked_domains"] if d.strip()
            )
        return cls(**kwargs)

    def with_overrides(self, **changes: Any) -> "ResearchConfig":
        return replace(self, **changes)


_POSITIVE = (
    "max_layers",
    "first_layer_questions",
    "per_layer_questions",
    "thesis_interval",
    "insight_cap",
    "executor_turn_cap",
    "result_row_limit",
    "cell_char_limit",
    "report_word_cap",
    "section_word_cap",
    "view_query_budget",
    "max_workers",
)


def validate_config(config: ResearchConfig) -> ResearchConfig:
    """Return ``config`` unchanged if every constraint holds.

    Raises ConfigError for the first violated constraint, in field order.
    """
    for name in _POSITIVE:
        value = getattr(config, name)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"{name} must be an integer")
        if value < 1:
            raise ConfigError(name, f"{name} must be ≥ 1")
        if name == "thesis_interval" and value > config.max_layers:
            raise ConfigError(name, "thesis_interval exceeds max_layers")
    if config.structured_retries < 0:
        raise ConfigError("structured_retries", "structured_retries must be ≥ 0")
    if config.search_date_cutoff is not None and not isinstance(
        config.search_date_cutoff, dt.date
    ):
        raise ConfigError("search_date_cutoff", "search_date_cutoff must be a date")
    for domain in config.blocked_domains:
        if not domain or "/" in domain or " " in domain:
            raise ConfigError("blocked_domains", f"invalid hostname in blocked_domains: {domain!r}")
    return config


@dataclass(frozen=True)
class RunSettings:
    """Everything a run needs besides the research parameters.

    Loaded from the same JSON file as :class:`ResearchConfig`; the research
    parameters live under the ``"research"`` key.
    """

    research: ResearchConfig = field(default_factory=ResearchConfig)
    dsn: str | None = None
    # provider: {"kind": "http"|"scripted"|"heuristic", ...}
    provider: dict[str, Any] = field(default_factory=lambda: {"kind": "http"})
    # search: {"kind": "serper"|"fixture"|"none", ...}
    search: dict[str, Any] = field(default_factory=lambda: {"kind": "none"})
    models: dict[str, str] = field(default_factory=lambda: {"default": "gpt-5"})
    db_description: str | None = None

    @classmethod
    def load(cls, path: str | Path) -> "RunSettings":
        path = Path(path)
        data = json.loads(path.read_text())
        base = path.parent
        research = validate_config(ResearchConfig.from_dict(data.get("research", {})))
        provider = _resolve_paths(dict(data.get("provider", {"kind": "http"})), base)
        search = _resolve_paths(dict(data.get("search", {"kind": "none"})), base)
        return cls(
            research=research,
            dsn=data.get("dsn"),
            provider=provider,
            search=search,
            models=dict(data.get("models", {"default": "gpt-5"})),
            db_description=data.get("db_description"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "research": self.research.to_dict(),
            "dsn": self.dsn,
            "provider": self.provider,
            "search": self.search,
            "models": self.models,
            "db_description": self.db_description,
        }


def _resolve_paths(section: dict[str, Any], base: Path) -> dict[str, Any]:
    for key in ("path", "fixture"):
        value = section.get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            section[key] = str((base / value).resolve())
    return section
