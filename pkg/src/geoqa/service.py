"""Query service: guardrails, geocoding, the tool loop, caching and tracing.

Request path: guardrail check -> cache probe -> (on miss) tool loop against
the configured backend with the store executor -> cache fill. Every response
carries a trace with per-phase millisecond timings, the executed call chain,
the cache flag and the guardrail verdict. Rejected requests never reach the
generation backend.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import yaml

from .adapter import (
    BackendUnavailable,
    GenerationRequest,
    IncompleteCall,
    LoopOutcome,
    MockBackend,
    MockMiss,
    RemoteBackend,
    run_tool_loop,
)
from .datagen import QuestionTemplate, load_templates
from .overpass import OverpassClient
from .protocol import CLOSE_TAG, OPEN_TAG, ToolResult, serialize_call
from .store import (
    GazetteerEntry,
    GeoPoint,
    LocationNotFound,
    Store,
    build_executor,
    canonicalize_name,
    haversine_km,
    ingest,
)

logger = logging.getLogger(__name__)


class ServiceError(Exception):
    pass


DEFAULT_KEYWORDS = {
    "en": [
        "hospital", "supermarket", "pharmacy", "walk", "walking", "bike",
        "cycling", "drive", "driving", "car", "foot", "distance", "far",
        "time", "minutes", "km", "kilometres", "kilometers", "nearest",
        "closest", "access", "reach",
    ],
    "es": [
        "hospital", "supermercado", "farmacia", "andando", "a pie", "bici",
        "bicicleta", "coche", "distancia", "tiempo", "minutos", "cercano",
        "cercana", "acceso",
    ],
    "eu": ["ospitale", "supermerkatu", "farmazia", "oinez", "bizikletaz",
           "autoz", "distantzia", "denbora", "hurbilen"],
}

DEFAULT_UNSAFE_PATTERNS = [
    "ignore previous instructions",
    "ignore your instructions",
    "system prompt",
]


@dataclass
class ServiceConfig:
    dataset: str = ""
    gazetteer: str = ""
    template_files: List[str] = field(default_factory=list)
    backend_kind: str = "mock"  # mock | remote
    backend_endpoint: str = ""
    mock_fixtures: str = ""
    timeout_s: float = 30.0
    cache_capacity: int = 256
    retry_budget: int = 1
    max_question_length: int = 500
    keywords: Dict[str, List[str]] = field(
        default_factory=lambda: {k: list(v) for k, v in DEFAULT_KEYWORDS.items()}
    )
    unsafe_patterns: List[str] = field(
        default_factory=lambda: list(DEFAULT_UNSAFE_PATTERNS)
    )
    listen_host: str = "127.0.0.1"
    listen_port: int = 8080
    overpass_enabled: bool = False
    overpass_endpoint: str = ""
    static_dir: str = ""
    system_prompt: str = ""


_ENV_OVERRIDES = {
    "GEOQA_DATASET": ("dataset", str),
    "GEOQA_GAZETTEER": ("gazetteer", str),
    "GEOQA_BACKEND": ("backend_kind", str),
    "GEOQA_ENDPOINT": ("backend_endpoint", str),
    "GEOQA_MOCK_FIXTURES": ("mock_fixtures", str),
    "GEOQA_TIMEOUT_S": ("timeout_s", float),
    "GEOQA_CACHE_CAPACITY": ("cache_capacity", int),
    "GEOQA_RETRY_BUDGET": ("retry_budget", int),
    "GEOQA_LISTEN_HOST": ("listen_host", str),
    "GEOQA_LISTEN_PORT": ("listen_port", int),
    "GEOQA_STATIC_DIR": ("static_dir", str),
}


def load_config(path=None, env: Optional[Dict[str, str]] = None) -> ServiceConfig:
    """Build the config from an optional YAML file plus environment overrides."""
    config = ServiceConfig()
    base_dir = Path(".")
    if path is not None:
        base_dir = Path(path).parent
        with open(path, "r", encoding="utf-8") as handle:
            raw = yaml.safe_load(handle) or {}
        for key, value in raw.items():
            if not hasattr(config, key):
                raise ServiceError(f"unknown config key {key!r}")
            setattr(config, key, value)
    env = dict(os.environ if env is None else env)
    for variable, (attr, cast) in _ENV_OVERRIDES.items():
        if variable in env:
            setattr(config, attr, cast(env[variable]))
    # Paths in the file are relative to the file itself.
    for attr in ("dataset", "gazetteer", "mock_fixtures", "static_dir"):
        value = getattr(config, attr)
        if value and not Path(value).is_absolute():
            setattr(config, attr, str((base_dir / value).resolve()))
    config.template_files = [
        str((base_dir / f).resolve()) if not Path(f).is_absolute() else f
        for f in config.template_files
    ]
    return config


# -- request / trace -------------------------------------------------------------


@dataclass(frozen=True)
class QueryRequest:
    question: str
    point: Optional[GeoPoint] = None
    language: Optional[str] = None


@dataclass(frozen=True)
class GuardrailVerdict:
    verdict: str  # allowed | rejected_out_of_scope | rejected_unsafe | rejected_malformed
    reason: str = ""
    sanitized: bool = False
    sanitized_question: str = ""

    @property
    def allowed(self) -> bool:
        return self.verdict == "allowed"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "sanitized": self.sanitized,
        }


@dataclass
class QueryTrace:
    inference_ms: float = 0.0
    data_lookup_ms: float = 0.0
    backend_logic_ms: float = 0.0
    cache_hit: bool = False
    calls: List[dict] = field(default_factory=list)
    guardrail: Optional[GuardrailVerdict] = None

    def to_dict(self) -> dict:
        return {
            "inference_ms": self.inference_ms,
            "data_lookup_ms": self.data_lookup_ms,
            "backend_logic_ms": self.backend_logic_ms,
            "cache_hit": self.cache_hit,
            "calls": self.calls,
            "guardrail": self.guardrail.to_dict() if self.guardrail else None,
        }


def guardrail_check(
    request: QueryRequest,
    keywords: Dict[str, List[str]],
    unsafe_patterns: Sequence[str] = (),
    max_length: int = 500,
) -> GuardrailVerdict:
    """Filter a request before it can reach the model.

    Malformed input (empty, oversized, control characters) and unsafe or
    out-of-scope text are rejected; raw call markers are stripped so user
    text can never smuggle an executable span into the context.
    """
    question = request.question.strip()
    if not question:
        return GuardrailVerdict("rejected_malformed", "empty question")
    if len(question) > max_length:
        return GuardrailVerdict(
            "rejected_malformed", f"question longer than {max_length} characters"
        )
    if any(ord(ch) < 32 and ch not in "\n\t" for ch in question):
        return GuardrailVerdict("rejected_malformed", "control characters in question")

    lowered = question.casefold()
    for pattern in unsafe_patterns:
        if pattern.casefold() in lowered:
            return GuardrailVerdict("rejected_unsafe", f"matched pattern {pattern!r}")

    sanitized = question
    stripped = False
    for marker in (OPEN_TAG, CLOSE_TAG):
        if marker in sanitized:
            sanitized = sanitized.replace(marker, "")
            stripped = True
    if stripped:
        sanitized = sanitized.strip()

    folded = canonicalize_name(sanitized)
    in_scope = request.point is not None
    if not in_scope:
        for words in keywords.values():
            if any(canonicalize_name(word) in folded for word in words):
                in_scope = True
                break
    if not in_scope:
        return GuardrailVerdict(
            "rejected_out_of_scope",
            "no known service, travel mode or metric keyword",
            sanitized=stripped,
            sanitized_question=sanitized,
        )
    return GuardrailVerdict(
        "allowed", "ok", sanitized=stripped, sanitized_question=sanitized
    )


# -- cache -----------------------------------------------------------------------


class ResponseCache:
    """Bounded LRU map from canonical query keys to answered responses."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._store: "OrderedDict[str, Tuple[str, List[dict]]]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> Optional[Tuple[str, List[dict]]]:
        with self._lock:
            if key not in self._store:
                self.misses += 1
                return None
            self._store.move_to_end(key)
            self.hits += 1
            return self._store[key]

    def put(self, key: str, answer: str, calls: List[dict]) -> None:
        with self._lock:
            if key in self._store:
                self._store.move_to_end(key)
            self._store[key] = (answer, calls)
            if len(self._store) > self.capacity:
                self._store.popitem(last=False)

    def stats(self) -> dict:
        with self._lock:
            return {
                "size": len(self._store),
                "capacity": self.capacity,
                "hits": self.hits,
                "misses": self.misses,
            }


# -- the service -----------------------------------------------------------------

REFUSAL_TEXT = {
    "rejected_malformed": "Sorry, that request is malformed.",
    "rejected_unsafe": "Sorry, I cannot help with that request.",
    "rejected_out_of_scope": (
        "Sorry, I can only answer questions about access to hospitals, "
        "supermarkets and pharmacies in the region."
    ),
}


class QueryService:
    def __init__(
        self,
        store: Store,
        backend: Union[MockBackend, RemoteBackend],
        config: Optional[ServiceConfig] = None,
        templates: Optional[Sequence[QuestionTemplate]] = None,
        overpass: Optional[OverpassClient] = None,
    ):
        self.store = store
        self.backend = backend
        self.config = config or ServiceConfig()
        self.templates = list(templates or [])
        self.cache = ResponseCache(self.config.cache_capacity)
        self.executor = build_executor(store)
        self.overpass = overpass
        self._stats_lock = threading.Lock()
        self._latency_totals = {"inference_ms": 0.0, "data_lookup_ms": 0.0,
                                "backend_logic_ms": 0.0}
        self._request_count = 0
        self._rejected_count = 0

    # -- geocoding ---------------------------------------------------------------

    def geocode(self, query: Union[str, GeoPoint]) -> GazetteerEntry:
        """Map a click point or free text to a gazetteer entry.

        Points snap to the nearest known place. Text goes through the
        gazetteer first; the live Overpass client (when enabled) is the
        fallback for street-level input.
        """
        if isinstance(query, GeoPoint):
            return min(
                self.store.gazetteer,
                key=lambda e: (haversine_km(query, e.point),
                               canonicalize_name(e.name)),
            )
        try:
            return self.store.resolve_entry(query)
        except LocationNotFound:
            if self.overpass is not None:
                return self.overpass.query_place(query)
            raise

    # -- the request path ---------------------------------------------------------

    def _cache_key(self, question: str, place: str) -> str:
        return canonicalize_name(question) + "||" + canonicalize_name(place)

    def handle_query(self, request: QueryRequest) -> Tuple[str, QueryTrace]:
        started = time.perf_counter()
        trace = QueryTrace()
        verdict = guardrail_check(
            request,
            keywords=self.config.keywords,
            unsafe_patterns=self.config.unsafe_patterns,
            max_length=self.config.max_question_length,
        )
        trace.guardrail = verdict
        if not verdict.allowed:
            trace.backend_logic_ms = (time.perf_counter() - started) * 1000.0
            self._record(trace, rejected=True)
            return REFUSAL_TEXT[verdict.verdict], trace

        question = verdict.sanitized_question
        place = ""
        if request.point is not None:
            place = self.geocode(request.point).name
        key = self._cache_key(question, place)

        cached = self.cache.get(key)
        if cached is not None:
            answer, calls = cached
            trace.cache_hit = True
            trace.calls = calls
            trace.inference_ms = 0.0
            trace.data_lookup_ms = 0.0
            trace.backend_logic_ms = (time.perf_counter() - started) * 1000.0
            self._record(trace)
            return answer, trace

        outcome = run_tool_loop(
            GenerationRequest(
                user_prompt=question,
                **(
                    {"system_prompt": self.config.system_prompt}
                    if self.config.system_prompt
                    else {}
                ),
            ),
            backend=self.backend,
            executor=self.executor,
            retry_budget=self.config.retry_budget,
        )
        trace.calls = _describe_calls(outcome)
        trace.inference_ms = outcome.timings.get("generation", 0.0) * 1000.0
        trace.data_lookup_ms = outcome.timings.get("execution", 0.0) * 1000.0
        self.cache.put(key, outcome.final_text, trace.calls)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        trace.backend_logic_ms = max(
            0.0, elapsed_ms - trace.inference_ms - trace.data_lookup_ms
        )
        self._record(trace)
        return outcome.final_text, trace

    def _record(self, trace: QueryTrace, rejected: bool = False) -> None:
        with self._stats_lock:
            self._request_count += 1
            if rejected:
                self._rejected_count += 1
            self._latency_totals["inference_ms"] += trace.inference_ms
            self._latency_totals["data_lookup_ms"] += trace.data_lookup_ms
            self._latency_totals["backend_logic_ms"] += trace.backend_logic_ms

    def stats(self) -> dict:
        with self._stats_lock:
            count = self._request_count
            means = {
                phase: (total / count if count else 0.0)
                for phase, total in self._latency_totals.items()
            }
            return {
                "requests": count,
                "rejected": self._rejected_count,
                "cache": self.cache.stats(),
                "latency_ms_mean": means,
            }

    def templates_payload(self) -> List[dict]:
        return [
            {
                "id": t.id,
                "text": t.text,
                "language": t.language,
                "slots": list(t.slots()),
            }
            for t in self.templates
        ]


def _describe_calls(outcome: LoopOutcome) -> List[dict]:
    described = []
    for call, result in outcome.calls:
        entry = {
            "call": serialize_call(call),
            "result": None,
            "error": None,
        }
        if isinstance(result, ToolResult):
            entry["result"] = {name: value for name, value in result.fields}
        else:
            entry["error"] = str(result)
        described.append(entry)
    return described


def build_service(config: ServiceConfig) -> QueryService:
    """Wire a service from configuration: store, backend, templates, overpass."""
    if not config.dataset or not config.gazetteer:
        raise ServiceError("config must set dataset and gazetteer paths")
    store = ingest(config.dataset, config.gazetteer)
    if config.backend_kind == "mock":
        backend = MockBackend()
        if config.mock_fixtures:
            with open(config.mock_fixtures, "r", encoding="utf-8") as handle:
                for question, completion in json.load(handle).items():
                    backend.register(question, completion)
    elif config.backend_kind == "remote":
        if not config.backend_endpoint:
            raise ServiceError("remote backend requires backend_endpoint")
        backend = RemoteBackend(config.backend_endpoint, timeout=config.timeout_s)
    else:
        raise ServiceError(f"unknown backend kind {config.backend_kind!r}")
    templates: List[QuestionTemplate] = []
    for path in config.template_files:
        templates.extend(load_templates(path))
    overpass = None
    if config.overpass_enabled:
        overpass = OverpassClient(
            endpoint=config.overpass_endpoint or None, timeout=config.timeout_s
        )
    return QueryService(
        store=store,
        backend=backend,
        config=config,
        templates=templates,
        overpass=overpass,
    )


# -- HTTP layer --------------------------------------------------------------------

from pydantic import BaseModel


class QueryBody(BaseModel):
    question: str
    lat: Optional[float] = None
    lon: Optional[float] = None
    lang: Optional[str] = None


def create_app(service: QueryService):
    """FastAPI application exposing /query, /health, /stats and /templates."""
    from fastapi import FastAPI, HTTPException
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="geoqa query service")

    @app.get("/health")
    def health():
        return {"status": "ok", "records": len(service.store.records),
                "places": len(service.store.gazetteer)}

    @app.get("/stats")
    def stats():
        return service.stats()

    @app.get("/templates")
    def templates():
        return {"templates": service.templates_payload()}

    @app.get("/geocode")
    def geocode(lat: float, lon: float):
        try:
            entry = service.geocode(GeoPoint(lat, lon))
        except LocationNotFound as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "name": entry.name,
            "lat": entry.point.lat,
            "lon": entry.point.lon,
        }

    @app.post("/query")
    def query(body: QueryBody):
        point = None
        if body.lat is not None and body.lon is not None:
            point = GeoPoint(body.lat, body.lon)
        request = QueryRequest(
            question=body.question, point=point, language=body.lang
        )
        try:
            answer, trace = service.handle_query(request)
        except (BackendUnavailable, MockMiss, IncompleteCall) as exc:
            raise HTTPException(
                status_code=503, detail={"error": str(exc)}
            ) from exc
        return {"answer": answer, "trace": trace.to_dict()}

    static_dir = service.config.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(config: ServiceConfig) -> None:
    import uvicorn

    service = build_service(config)
    app = create_app(service)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port)
