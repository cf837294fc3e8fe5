"""Text-generation backends and the pause-execute-resume inference loop.

Generation is abstracted behind a one-method backend protocol: it receives a
completion request (full prompt, stop sequences, token budget, temperature)
and streams text chunks back. Two backends ship:

* MockBackend -- a deterministic completion table keyed by the canonicalized
  question, for tests and offline demos,
* RemoteBackend -- a thin client for any HTTP server speaking the minimal
  completion protocol (POST {endpoint}/complete, chunked text response).

The loop streams generation through the call scanner; when a complete
argument list arrives it pauses, executes the call, injects the canonical
`` -> result</API>`` span into the context and resumes. The model is never
trusted to produce result values itself. Executor failures burn the retry
budget via a diagnostic re-prompt; an exhausted budget yields a fallback
answer with the error recorded in the outcome.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple, Union

import requests

from .protocol import (
    CallReady,
    PlainText,
    StreamScanner,
    StreamSyntaxError,
    ToolCall,
    ToolResult,
    serialize_call,
)
from .store import ToolExecutionError, canonicalize_name


class AdapterError(Exception):
    pass


class BackendUnavailable(AdapterError):
    """The remote completion endpoint could not be reached in time."""


class MockMiss(AdapterError):
    """The mock table has no completion for this prompt: a fixture gap."""


class IncompleteCall(AdapterError):
    """Generation stopped (token budget or backend) inside a call span."""


DEFAULT_SYSTEM_PROMPT = (
    "You answer questions about access to essential services (hospitals, "
    "supermarkets, pharmacies) by walking, cycling or driving. When data is "
    "needed, emit exactly one call of the form "
    '<API>function(param="value", ...)</API> using the functions '
    "get_closest_distance_time(category, mode, location, metric_to_extract), "
    "list_within_threshold(category, mode, metric, threshold, population_max) "
    "and compare_modes(category, location, metric). The execution result is "
    "inserted after the call; use it to finish the answer."
)

QUESTION_MARKER = "\n\n### Question:\n"
ANSWER_MARKER = "\n\n### Answer:\n"

FALLBACK_ANSWER = " Sorry, I could not complete this query."

PAUSE_STOP_SEQUENCE = ")"  # within an open call span; enforced by the scanner


def assemble_prompt(system_prompt: str, user_prompt: str, partial: str = "") -> str:
    return f"{system_prompt}{QUESTION_MARKER}{user_prompt}{ANSWER_MARKER}{partial}"


def build_retry_prompt(user_prompt: str, failed_call: ToolCall, diagnostic: str) -> str:
    """Re-prompt for the recovery loop: question, failed call, one-line error."""
    return (
        f"{user_prompt}\n\nThe call {serialize_call(failed_call)} failed: "
        f"{diagnostic.splitlines()[0]}\nEmit a corrected call."
    )


@dataclass(frozen=True)
class GenerationRequest:
    user_prompt: str
    system_prompt: str = DEFAULT_SYSTEM_PROMPT
    pause_on_call: bool = True
    max_tokens: int = 512
    temperature: float = 0.0

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass(frozen=True)
class CompletionRequest:
    """What actually crosses the backend boundary."""

    prompt: str
    stop: Tuple[str, ...]
    max_tokens: int
    temperature: float


CallRecord = Tuple[ToolCall, Union[ToolResult, ToolExecutionError]]


@dataclass
class LoopOutcome:
    final_text: str
    calls: List[CallRecord] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return all(isinstance(r, ToolResult) for _, r in self.calls)


# One mock "token": a word with any leading whitespace, or a trailing
# whitespace run. Concatenating the tokens restores the text exactly.
_TOKEN_RE = re.compile(r"\s*\S+|\s+\Z")


class MockBackend:
    """Deterministic completion table for tests and offline demos.

    Keys are canonicalized question strings (the gazetteer canonicalization
    rules), so paraphrases must be registered explicitly. On resume the
    already-generated text must be a byte prefix of the scripted completion;
    anything else is a fixture gap and raises MockMiss rather than guessing.
    """

    def __init__(self, completions: Optional[Dict[str, str]] = None):
        self._table: Dict[str, str] = {}
        self.calls_served = 0
        for question, completion in (completions or {}).items():
            self.register(question, completion)

    def register(self, question: str, completion: str) -> None:
        self._table[canonicalize_name(question)] = completion

    def stream(self, request: CompletionRequest) -> Iterator[str]:
        self.calls_served += 1
        question, partial = self._split_prompt(request.prompt)
        completion = self._table.get(canonicalize_name(question))
        if completion is None:
            raise MockMiss(f"no mock completion registered for {question!r}")
        if not completion.startswith(partial):
            raise MockMiss(
                f"resumed context diverged from the scripted completion for "
                f"{question!r}"
            )
        remaining = completion[len(partial) :]
        for i, token in enumerate(_TOKEN_RE.findall(remaining)):
            if i >= request.max_tokens:
                return
            yield token

    @staticmethod
    def _split_prompt(prompt: str) -> Tuple[str, str]:
        q_idx = prompt.find(QUESTION_MARKER)
        a_idx = prompt.rfind(ANSWER_MARKER)
        if q_idx < 0 or a_idx < 0 or a_idx < q_idx:
            raise MockMiss("prompt does not follow the mock prompt template")
        question = prompt[q_idx + len(QUESTION_MARKER) : a_idx]
        partial = prompt[a_idx + len(ANSWER_MARKER) :]
        return question, partial


class RemoteBackend:
    """Client for the minimal completion wire protocol.

    Request: ``POST {endpoint}/complete`` with JSON
    ``{"prompt", "stop", "max_tokens", "temperature"}``; response: the
    completion streamed as chunked UTF-8 text. Any inference server exposing
    this shape plugs in.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        self.calls_served = 0

    def stream(self, request: CompletionRequest) -> Iterator[str]:
        self.calls_served += 1
        payload = {
            "prompt": request.prompt,
            "stop": list(request.stop),
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        try:
            response = self._session.post(
                f"{self.endpoint}/complete",
                json=payload,
                stream=True,
                timeout=self.timeout,
            )
            response.raise_for_status()
            for chunk in response.iter_content(chunk_size=None, decode_unicode=True):
                if chunk:
                    yield chunk
        except requests.RequestException as exc:
            raise BackendUnavailable(str(exc)) from exc


Backend = Union[MockBackend, RemoteBackend]


def generate_stream(request: GenerationRequest, backend: Backend) -> Iterator[str]:
    """Stream raw completion chunks for a request, no call interception."""
    completion_request = CompletionRequest(
        prompt=assemble_prompt(request.system_prompt, request.user_prompt),
        stop=(PAUSE_STOP_SEQUENCE,) if request.pause_on_call else (),
        max_tokens=request.max_tokens,
        temperature=request.temperature,
    )
    yield from backend.stream(completion_request)


def _error_result(error: ToolExecutionError) -> ToolResult:
    return ToolResult(fields=(("error", str(error)),))


def run_tool_loop(
    request: GenerationRequest,
    backend: Backend,
    executor: Callable[[ToolCall], ToolResult],
    retry_budget: int = 0,
) -> LoopOutcome:
    """Drive generation through the scanner, executing calls as they complete.

    Generation and execution strictly alternate. A successful call is
    re-serialized canonically (result included) into both the visible answer
    and the resumed context. A failed call is recorded with an error payload;
    while the retry budget lasts, the loop re-prompts with the diagnostic,
    otherwise it appends a fallback sentence and stops.
    """
    if retry_budget < 0:
        raise ValueError("retry_budget must be non-negative")
    parts: List[str] = []
    calls: List[CallRecord] = []
    generation_s = 0.0
    execution_s = 0.0
    user_prompt = request.user_prompt
    budget = retry_budget

    while True:  # one iteration per generation round (fresh prompt)
        scanner = StreamScanner()
        partial = ""
        round_done = False
        retry_next: Optional[str] = None

        while not round_done:  # one iteration per stream segment (resume)
            completion_request = CompletionRequest(
                prompt=assemble_prompt(request.system_prompt, user_prompt, partial),
                stop=(PAUSE_STOP_SEQUENCE,) if request.pause_on_call else (),
                max_tokens=request.max_tokens,
                temperature=request.temperature,
            )
            pending: Optional[ToolCall] = None
            start = time.perf_counter()
            stream = backend.stream(completion_request)
            for chunk in stream:
                for event in scanner.feed(chunk):
                    if isinstance(event, PlainText):
                        parts.append(event.text)
                        partial += event.text
                    elif isinstance(event, CallReady):
                        pending = event.call
                        break
                    # anything after the pause point would be model-invented
                if pending is not None:
                    break
            generation_s += time.perf_counter() - start

            if pending is None:
                if scanner.in_call_span():
                    raise IncompleteCall(
                        "generation ended inside a call span (token budget hit?)"
                    )
                try:
                    for event in scanner.finish():
                        if isinstance(event, PlainText):
                            parts.append(event.text)
                except StreamSyntaxError as exc:
                    raise IncompleteCall(str(exc)) from exc
                round_done = True
                continue

            start = time.perf_counter()
            try:
                result = executor(pending)
            except ToolExecutionError as error:
                execution_s += time.perf_counter() - start
                calls.append((pending, error))
                parts.append(serialize_call(pending, _error_result(error)))
                if budget > 0:
                    budget -= 1
                    retry_next = build_retry_prompt(
                        request.user_prompt, pending, str(error)
                    )
                else:
                    parts.append(FALLBACK_ANSWER)
                round_done = True
                continue
            execution_s += time.perf_counter() - start

            calls.append((pending, result))
            injected = serialize_call(pending, result)
            parts.append(injected)
            partial += injected
            scanner.complete_span()

        if retry_next is None:
            break
        user_prompt = retry_next

    return LoopOutcome(
        final_text="".join(parts),
        calls=calls,
        timings={"generation": generation_s, "execution": execution_s},
    )
