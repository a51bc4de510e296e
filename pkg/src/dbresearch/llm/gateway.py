"""Single choke point for model calls: providers, caching, structured output.

Modes
-----
``live``    call the provider, nothing persisted.
``record``  call the provider and persist every response under its cache key.
``replay``  serve exclusively from the cache; a miss is an error.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

from . import templates
from .schemas import Schema, SchemaViolation, TEXT

logger = logging.getLogger(__name__)

MODES = ("live", "record", "replay")


class GatewayError(RuntimeError):
    pass


class ProviderConfigError(GatewayError):
    """Provider cannot be constructed (e.g. missing credentials)."""


class ProviderError(GatewayError):
    """Transport-level failure talking to a provider."""


class ReplayCacheMiss(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"replay cache miss for key {key}")
        self.key = key


class StructuredOutputError(GatewayError):
    def __init__(self, template_id: str, message: str):
        super().__init__(f"{template_id}: schema violation after retries: {message}")
        self.template_id = template_id


@dataclass(frozen=True)
class ChatRequest:
    template_id: str
    model: str
    prompt: str
    schema_id: str

    @property
    def messages(self) -> list[dict[str, str]]:
        return [{"role": "user", "content": self.prompt}]


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class CallableProvider:
    """Wraps ``fn(request) -> str``; the backbone of test doubles."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn

    def complete(self, request: ChatRequest) -> str:
        return self.fn(request)


class ScriptedProvider:
    """Serves responses from a fixture keyed by template id.

    Fixture format (JSON)::

        {"<template_id>": ["response 1", {"match": "substring", "response": "..."}, ...]}

    Plain strings are consumed in order. Entries with ``match`` are consumed by
    the first call whose prompt contains the substring, which keeps concurrent
    callers deterministic. ``"*"`` holds fallbacks for any template.
    """

    def __init__(self, script: Mapping[str, list[Any]]):
        self._queues = {k: list(v) for k, v in script.items()}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedProvider":
        return cls(json.loads(Path(path).read_text()))

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            for key in (request.template_id, "*"):
                queue = self._queues.get(key, [])
                for i, entry in enumerate(queue):
                    if isinstance(entry, dict):
                        if entry.get("match", "") in request.prompt:
                            if not entry.get("sticky"):
                                queue.pop(i)
                            return entry["response"]
                    else:
                        return queue.pop(i)
        raise ProviderError(f"scripted provider exhausted for template {request.template_id!r}")


class HTTPChatProvider:
    """OpenAI-compatible chat-completions client (messages in, text out)."""

    def __init__(
        self,
        base_url: str = "https://api.openai.com/v1",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 300.0,
    ):
        key = os.environ.get(api_key_env)
        if not key:
            raise ProviderConfigError(f"no provider credentials: set {api_key_env}")
        self.base_url = base_url.rstrip("/")
        self.api_key = key
        self.timeout = timeout

    def complete(self, request: ChatRequest) -> str:
        import httpx

        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {self.api_key}"},
                json={"model": request.model, "messages": request.messages},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat completion failed: {exc}") from exc


class ResponseCache:
    """Content-addressed response store: one JSON file per key.

    Reads are lock-free; writes are serialized and atomic (tmp + rename).
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text())["response"]

    def put(self, key: str, response: str, **meta: Any) -> None:
        path = self._path(key)
        payload = json.dumps({"key": key, **meta, "response": response}, indent=1, sort_keys=True)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(f".tmp{threading.get_ident()}")
            tmp.write_text(payload)
            os.replace(tmp, path)

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*/*.json")) if self.root.exists() else 0


def cache_key(*parts: str) -> str:
    blob = json.dumps(list(parts), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class ModelCall:
    template_id: str
    model: str
    schema_id: str
    key: str
    prompt: str
    response: str
    status: str  # ok | invalid | error
    error: str = ""


@dataclass
class Gateway:
    provider: Provider | None = None
    mode: str = "live"
    cache: ResponseCache | None = None
    models: dict[str, str] = field(default_factory=lambda: {"default": "default"})
    retries: int = 3
    calls: list[ModelCall] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise GatewayError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode in ("record", "replay") and self.cache is None:
            raise GatewayError(f"{self.mode} mode requires a cache directory")
        if self.mode == "replay" and not self.cache.root.is_dir():
            raise GatewayError(f"replay cache directory does not exist: {self.cache.root}")
        if self.mode != "replay" and self.provider is None:
            raise ProviderConfigError(f"{self.mode} mode requires a provider")
        self._lock = threading.Lock()

    def model_for(self, template_id: str) -> str:
        return self.models.get(template_id, self.models.get("default", "default"))

    def render(self, template_id: str, bindings: Mapping[str, Any]) -> str:
        return templates.render(template_id, bindings)

    def raw(self, template_id: str, prompt: str, schema_id: str = "text") -> str:
        """One provider round-trip through the cache; no parsing."""
        model = self.model_for(template_id)
        key = cache_key(model, schema_id, prompt)
        if self.mode == "replay":
            response = self.cache.get(key)
            if response is None:
                raise ReplayCacheMiss(key)
            return response
        if self.mode == "record":
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        request = ChatRequest(template_id, model, prompt, schema_id)
        response = self.provider.complete(request)
        if not isinstance(response, str):
            raise ProviderError(f"provider returned {type(response).__name__}, expected str")
        if self.mode == "record":
            self.cache.put(key, response, template_id=template_id, model=model, schema_id=schema_id)
        return response

    def complete_text(self, template_id: str, bindings: Mapping[str, Any]) -> str:
        prompt = self.render(template_id, bindings)
        response = self.raw(template_id, prompt)
        self._log(template_id, TEXT.schema_id, prompt, response, "ok")
        return response

    def complete_structured(
        self,
        template_id: str,
        bindings: Mapping[str, Any],
        schema: Schema,
        retries: int | None = None,
    ) -> Any:
        """Render, call, parse; on a schema violation re-ask with the error appended."""
        retries = self.retries if retries is None else retries
        base = self.render(template_id, bindings)
        prompt = base
        last_error = ""
        for attempt in range(retries + 1):
            response = self.raw(template_id, prompt, schema.schema_id)
            try:
                value = schema.parse(response)
            except SchemaViolation as exc:
                last_error = str(exc)
                self._log(template_id, schema.schema_id, prompt, response, "invalid", last_error)
                logger.debug("%s attempt %d invalid: %s", template_id, attempt, last_error)
                prompt = (
                    f"{base}\n\nYour previous response was invalid: {last_error}\n"
                    "Respond again, following the required output format exactly."
                )
                continue
            self._log(template_id, schema.schema_id, prompt, response, "ok")
            return value
        raise StructuredOutputError(template_id, last_error)

    def _log(self, template_id, schema_id, prompt, response, status, error=""):
        call = ModelCall(
            template_id, self.model_for(template_id), schema_id,
            cache_key(self.model_for(template_id), schema_id, prompt), prompt, response, status, error,
        )
        with self._lock:
            self.calls.append(call)


def record_replay_mode(
    mode: str,
    *,
    provider: Provider | None = None,
    cache_dir: str | Path | None = None,
    models: Mapping[str, str] | None = None,
    retries: int = 3,
) -> Gateway:
    """Build a gateway handle for ``mode``; replay requires an existing cache dir."""
    cache = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        if mode == "record":
            cache_dir.mkdir(parents=True, exist_ok=True)
        cache = ResponseCache(cache_dir)
    return Gateway(
        provider=provider,
        mode=mode,
        cache=cache,
        models=dict(models or {"default": "default"}),
        retries=retries,
    )


def build_provider(spec: Mapping[str, Any]) -> Provider:
    """Construct a provider from a config section ``{"kind": ...}``."""
    kind = spec.get("kind", "http")
    if kind == "http":
        return HTTPChatProvider(
            base_url=spec.get("base_url", "https://api.openai.com/v1"),
            api_key_env=spec.get("api_key_env", "OPENAI_API_KEY"),
        )
    if kind == "scripted":
        return ScriptedProvider.from_file(spec["path"])
    if kind == "heuristic":
        from .heuristic import HeuristicModel

        return CallableProvider(HeuristicModel(seed=spec.get("seed", 0)))
    raise ProviderConfigError(f"unknown provider kind {kind!r}")
