"""Embedded API-call grammar: parsing, canonical serialization, stream interception.

The wire format shared by training data, the inference loop and the evaluation
harness is::

    <API>name(k1="v1", k2="v2") -> {"field": 0.402, "other": "text"}</API>

    call    := "<API>" name "(" args ")" [" -> " payload] "</API>"
    name    := [a-z_][a-z0-9_]*
    args    := kv ("," " " kv)*            # empty args list allowed
    kv      := name "=" quoted-string
    payload := flat map of name to number-or-string

Canonical serialization uses exactly one space after each comma, no spaces
around "=", double quotes around every argument value, and numbers rendered
with no trailing zeros beyond their input precision. Nested call spans are
rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

OPEN_TAG = "<API>"
CLOSE_TAG = "</API>"
RESULT_ARROW = " -> "

_NAME_RE = re.compile(r"[a-z_][a-z0-9_]*\Z")


class ProtocolError(Exception):
    """Base class for grammar-level failures."""


class CallSyntaxError(ProtocolError):
    """Raised when text violates the call grammar; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class StreamSyntaxError(ProtocolError):
    """A malformed call span surfaced mid-stream; carries the raw span."""

    def __init__(self, message: str, raw_span: str):
        self.raw_span = raw_span
        super().__init__(f"{message}: {raw_span!r}")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    choices: Optional[tuple] = None  # enum-of-strings when set, free-string otherwise
    required: bool = True


@dataclass(frozen=True)
class ToolCallSpec:
    """Registered function shape: ordered parameters and result fields."""

    name: str
    params: Tuple[ParamSpec, ...]
    result_fields: Tuple[str, ...] = ()

    def param_names(self) -> Tuple[str, ...]:
        return tuple(p.name for p in self.params)


@dataclass(frozen=True)
class ToolCall:
    function: str
    arguments: Tuple[Tuple[str, str], ...]  # ordered (name, value) pairs

    def get(self, name: str) -> Optional[str]:
        for key, value in self.arguments:
            if key == name:
                return value
        return None

    def argument_names(self) -> Tuple[str, ...]:
        return tuple(name for name, _ in self.arguments)


Scalar = Union[int, float, str]


@dataclass(frozen=True)
class ToolResult:
    fields: Tuple[Tuple[str, Scalar], ...]  # ordered (name, value) pairs

    def get(self, name: str) -> Optional[Scalar]:
        for key, value in self.fields:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class PlainSegment:
    text: str


@dataclass(frozen=True)
class CallSegment:
    call: ToolCall
    result: Optional[ToolResult]


@dataclass(frozen=True)
class AnnotatedText:
    """Alternating plain-text and call segments; render() round-trips exactly."""

    segments: Tuple[Union[PlainSegment, CallSegment], ...]

    def calls(self) -> List[CallSegment]:
        return [s for s in self.segments if isinstance(s, CallSegment)]

    def render(self) -> str:
        parts = []
        for segment in self.segments:
            if isinstance(segment, PlainSegment):
                parts.append(segment.text)
            else:
                parts.append(serialize_call(segment.call, segment.result))
        return "".join(parts)


# -- serialization ----------------------------------------------------------


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"')


def _unescape(value: str) -> str:
    return value.replace('\\"', '"').replace("\\\\", "\\")


def format_number(value: Union[int, float]) -> str:
    """Shortest faithful decimal rendering: 0.402 stays 0.402, 5 stays 5."""
    if isinstance(value, bool):
        raise ProtocolError("boolean payload values are not part of the grammar")
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if not math.isfinite(value):
        raise ProtocolError(f"non-finite payload value {value!r}")
    return repr(value)


def serialize_result(result: ToolResult) -> str:
    entries = []
    for name, value in result.fields:
        if isinstance(value, str):
            rendered = f'"{_escape(value)}"'
        else:
            rendered = format_number(value)
        entries.append(f'"{name}": {rendered}')
    return "{" + ", ".join(entries) + "}"


def serialize_call(call: ToolCall, result: Optional[ToolResult] = None) -> str:
    """Canonical wire form; parse_call(serialize_call(c, r)) == (c, r)."""
    args = ", ".join(f'{name}="{_escape(value)}"' for name, value in call.arguments)
    body = f"{call.function}({args})"
    if result is not None:
        body += RESULT_ARROW + serialize_result(result)
    return OPEN_TAG + body + CLOSE_TAG


# -- parsing ----------------------------------------------------------------


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str, pos: int = 0):
        self.text = text
        self.pos = pos

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, literal: str, what: str) -> None:
        if not self.text.startswith(literal, self.pos):
            raise CallSyntaxError(f"expected {what}", self.pos)
        self.pos += len(literal)

    def take_name(self) -> str:
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].islower()
            or self.text[self.pos] == "_"
            or (self.pos > start and self.text[self.pos].isdigit())
        ):
            self.pos += 1
        name = self.text[start : self.pos]
        if not name or not _NAME_RE.match(name):
            raise CallSyntaxError("expected identifier", start)
        return name

    def take_quoted(self) -> str:
        self.expect('"', "opening quote")
        start = self.pos
        out = []
        while True:
            if self.pos >= len(self.text):
                raise CallSyntaxError("unterminated quote", start - 1)
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    raise CallSyntaxError("unterminated escape", self.pos)
                nxt = self.text[self.pos + 1]
                if nxt not in ('"', "\\"):
                    raise CallSyntaxError(f"invalid escape \\{nxt}", self.pos)
                out.append(nxt)
                self.pos += 2
                continue
            if ch == '"':
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1


def _parse_number(token: str) -> Optional[Scalar]:
    if re.fullmatch(r"-?\d+", token):
        return int(token)
    if re.fullmatch(r"-?\d+\.\d+([eE][+-]?\d+)?|-?\d+[eE][+-]?\d+", token):
        return float(token)
    return None


def _parse_payload(cursor: _Cursor) -> ToolResult:
    cursor.expect("{", "payload opening brace")
    fields: list = []
    if cursor.peek() == "}":
        cursor.pos += 1
        return ToolResult(fields=())
    while True:
        name = cursor.take_quoted()
        cursor.expect(": ", "': ' after payload field name")
        if cursor.peek() == '"':
            value: Scalar = cursor.take_quoted()
        else:
            start = cursor.pos
            while cursor.peek() not in (",", "}", ""):
                cursor.pos += 1
            token = cursor.text[start : cursor.pos].strip()
            number = _parse_number(token)
            if number is None:
                raise CallSyntaxError(f"invalid payload value {token!r}", start)
            value = number
        fields.append((name, value))
        if cursor.peek() == "}":
            cursor.pos += 1
            return ToolResult(fields=tuple(fields))
        cursor.expect(", ", "', ' between payload fields")


def _parse_call_body(cursor: _Cursor) -> Tuple[ToolCall, Optional[ToolResult]]:
    function = cursor.take_name()
    cursor.expect("(", "opening parenthesis")
    arguments: list = []
    if cursor.peek() == ")":
        cursor.pos += 1
    else:
        while True:
            name = cursor.take_name()
            cursor.expect("=", "'=' after parameter name")
            value = cursor.take_quoted()
            arguments.append((name, value))
            if cursor.peek() == ")":
                cursor.pos += 1
                break
            cursor.expect(", ", "', ' between arguments")
    call = ToolCall(function=function, arguments=tuple(arguments))
    result: Optional[ToolResult] = None
    if cursor.text.startswith(RESULT_ARROW, cursor.pos):
        cursor.pos += len(RESULT_ARROW)
        result = _parse_payload(cursor)
    cursor.expect(CLOSE_TAG, "closing </API> tag")
    return call, result


def parse_call(text: str) -> Tuple[ToolCall, Optional[ToolResult]]:
    """Parse a string containing exactly one <API>...</API> span.

    Grammar violations raise CallSyntaxError with the byte offset; unknown
    functions or out-of-spec parameters parse fine and are left to
    validate_call, so evaluation can classify them instead of crashing.
    """
    start = text.find(OPEN_TAG)
    if start < 0:
        raise CallSyntaxError("no <API> opening tag", 0)
    cursor = _Cursor(text, start + len(OPEN_TAG))
    call, result = _parse_call_body(cursor)
    if OPEN_TAG in text[cursor.pos :]:
        raise CallSyntaxError("multiple call spans; use parse_annotated", cursor.pos)
    return call, result


def parse_annotated(text: str) -> AnnotatedText:
    """Split text into plain and call segments; render() restores it exactly."""
    segments: list = []
    pos = 0
    while True:
        start = text.find(OPEN_TAG, pos)
        if start < 0:
            if pos < len(text):
                segments.append(PlainSegment(text[pos:]))
            break
        if start > pos:
            segments.append(PlainSegment(text[pos:start]))
        cursor = _Cursor(text, start + len(OPEN_TAG))
        call, result = _parse_call_body(cursor)
        segments.append(CallSegment(call=call, result=result))
        pos = cursor.pos
    return AnnotatedText(segments=tuple(segments))


def extract_first_call(text: str) -> Optional[Tuple[ToolCall, Optional[ToolResult]]]:
    """Lenient first-call extraction for scoring model output; None if unparsable."""
    start = text.find(OPEN_TAG)
    if start < 0:
        return None
    cursor = _Cursor(text, start + len(OPEN_TAG))
    try:
        return _parse_call_body(cursor)
    except CallSyntaxError:
        return None


# -- streaming interception ---------------------------------------------------


@dataclass(frozen=True)
class PlainText:
    text: str


@dataclass(frozen=True)
class CallReady:
    call: ToolCall


@dataclass(frozen=True)
class End:
    pass


Event = Union[PlainText, CallReady, End]

_TEXT, _IN_CALL, _AWAIT_RESULT = range(3)


class StreamScanner:
    """Incremental detector for call spans in a token stream.

    Chunks may split the <API> marker anywhere. When the closing ``)`` of a
    complete argument list arrives, a CallReady event fires and everything
    after it up to ``</API>`` is swallowed: at inference time the loop injects
    the executed result itself, and when scanning finished text the embedded
    result span is already accounted for by the CallReady call.

    One scanner serves one logical stream; it is not thread-safe.
    """

    def __init__(self):
        self._state = _TEXT
        self._buffer = ""  # held-back text that may open a tag, or the call span
        self._span_start = ""  # raw span text kept for error reporting

    def feed(self, chunk: str) -> List[Event]:
        events: List[Event] = []
        self._buffer += chunk
        while True:
            if self._state == _TEXT:
                if not self._step_text(events):
                    break
            elif self._state == _IN_CALL:
                if not self._step_in_call(events):
                    break
            else:
                if not self._step_await_result():
                    break
        return events

    def finish(self) -> List[Event]:
        """Signal end-of-stream. Mid-span truncation is a stream error."""
        if self._state == _TEXT:
            events: List[Event] = []
            if self._buffer:
                events.append(PlainText(self._buffer))
                self._buffer = ""
            events.append(End())
            return events
        raise StreamSyntaxError(
            "stream ended inside a call span", self._span_start + self._buffer
        )

    def in_call_span(self) -> bool:
        return self._state != _TEXT

    def awaiting_result(self) -> bool:
        return self._state == _AWAIT_RESULT

    def complete_span(self) -> None:
        """Used by the loop after injecting `` -> result</API>`` itself."""
        if self._state != _AWAIT_RESULT:
            raise ProtocolError("no pending call span to complete")
        self._state = _TEXT
        self._buffer = ""
        self._span_start = ""

    # Each _step_* returns False when it needs more input.

    def _step_text(self, events: List[Event]) -> bool:
        idx = self._buffer.find(OPEN_TAG)
        if idx >= 0:
            if idx > 0:
                events.append(PlainText(self._buffer[:idx]))
            self._buffer = self._buffer[idx + len(OPEN_TAG) :]
            self._span_start = OPEN_TAG
            self._state = _IN_CALL
            return True
        # Hold back any suffix that could be the start of a split <API>.
        keep = 0
        max_keep = min(len(self._buffer), len(OPEN_TAG) - 1)
        for size in range(max_keep, 0, -1):
            if OPEN_TAG.startswith(self._buffer[-size:]):
                keep = size
                break
        emit_up_to = len(self._buffer) - keep
        if emit_up_to > 0:
            events.append(PlainText(self._buffer[:emit_up_to]))
            self._buffer = self._buffer[emit_up_to:]
        return False

    def _step_in_call(self, events: List[Event]) -> bool:
        end, nested = self._find_args_end(self._buffer)
        if nested is not None and (end is None or nested < end):
            raise StreamSyntaxError("nested call span", self._span_start + self._buffer)
        if end is None:
            return False
        span = self._buffer[:end]
        cursor = _Cursor(span + CLOSE_TAG, 0)
        try:
            call, _ = _parse_call_body(cursor)
        except CallSyntaxError as exc:
            raise StreamSyntaxError(
                f"malformed call: {exc}", self._span_start + span
            ) from None
        events.append(CallReady(call))
        self._span_start += span
        self._buffer = self._buffer[end:]
        self._state = _AWAIT_RESULT
        return True

    def _step_await_result(self) -> bool:
        """Swallow everything after the argument list through ``</API>``.

        A well-formed `` -> {payload}`` is scanned quote-aware so string
        values may contain the close tag; any other text the model produces
        here is suppressed, never emitted (it would be an invented result).
        """
        buffer = self._buffer
        payload_prefix = RESULT_ARROW + "{"
        if len(buffer) < len(payload_prefix) and payload_prefix.startswith(buffer):
            return False
        if buffer.startswith(payload_prefix):
            payload_end = self._find_payload_end(buffer, len(RESULT_ARROW))
            if payload_end is None:
                return False
            close = buffer.find(CLOSE_TAG, payload_end)
        else:
            close = buffer.find(CLOSE_TAG)
        if close < 0:
            return False
        self._buffer = buffer[close + len(CLOSE_TAG) :]
        self._state = _TEXT
        self._span_start = ""
        return True

    @staticmethod
    def _find_args_end(text: str) -> Tuple[Optional[int], Optional[int]]:
        """Locate the unquoted ``)`` closing the argument list.

        Returns (index just past it or None, index of an unquoted nested
        ``<API>`` or None). Quoted argument values may contain anything.
        """
        in_quote = False
        escaped = False
        for i, ch in enumerate(text):
            if in_quote:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_quote = False
                continue
            if ch == '"':
                in_quote = True
            elif ch == ")":
                return i + 1, None
            elif ch == "<" and text.startswith(OPEN_TAG, i):
                return None, i
        return None, None

    @staticmethod
    def _find_payload_end(text: str, start: int) -> Optional[int]:
        """Index just past the ``}`` closing a flat payload, quote-aware."""
        in_quote = False
        escaped = False
        for i in range(start + 1, len(text)):
            ch = text[i]
            if in_quote:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_quote = False
                continue
            if ch == '"':
                in_quote = True
            elif ch == "}":
                return i + 1
        return None


def scan_stream(chunks: Iterable[str]) -> Iterator[Event]:
    """Scan a complete (already generated) stream, yielding scanner events."""
    scanner = StreamScanner()
    for chunk in chunks:
        yield from scanner.feed(chunk)
    yield from scanner.finish()


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Validation:
    kind: str  # valid | syntax_invalid | location_invalid | other_invalid
    detail: str = ""

    @property
    def is_valid(self) -> bool:
        return self.kind == "valid"


VALID = Validation("valid")


class SpecRegistry:
    """The functions the store exports, in their wire shapes."""

    def __init__(self, specs: Sequence[ToolCallSpec]):
        self._specs = {spec.name: spec for spec in specs}

    def get(self, name: str) -> Optional[ToolCallSpec]:
        return self._specs.get(name)

    def names(self) -> List[str]:
        return sorted(self._specs)

    def __iter__(self):
        return iter(self._specs.values())


CATEGORY_CHOICES = ("hospital", "supermarket", "pharmacy")
MODE_CHOICES = ("walk", "bike", "drive")
METRIC_CHOICES = ("distance", "time")


def default_registry() -> SpecRegistry:
    return SpecRegistry(
        [
            ToolCallSpec(
                name="get_closest_distance_time",
                params=(
                    ParamSpec("category", CATEGORY_CHOICES),
                    ParamSpec("mode", MODE_CHOICES),
                    ParamSpec("location"),
                    ParamSpec("metric_to_extract", METRIC_CHOICES),
                ),
                result_fields=("distance", "time"),
            ),
            ToolCallSpec(
                name="list_within_threshold",
                params=(
                    ParamSpec("category", CATEGORY_CHOICES),
                    ParamSpec("mode", MODE_CHOICES),
                    ParamSpec("metric", METRIC_CHOICES),
                    ParamSpec("threshold"),
                    ParamSpec("population_max", required=False),
                ),
            ),
            ToolCallSpec(
                name="compare_modes",
                params=(
                    ParamSpec("category", CATEGORY_CHOICES),
                    ParamSpec("location"),
                    ParamSpec("metric", METRIC_CHOICES),
                ),
            ),
        ]
    )


def validate_call(
    call: ToolCall,
    registry: SpecRegistry,
    resolve: Optional[Callable[[str], object]] = None,
) -> Validation:
    """Classify a parsed call: valid, syntax-, location- or other-invalid.

    Parameter order matters: a misordered-but-complete argument list is a
    syntax error, it is never silently reordered. ``resolve`` is the
    gazetteer lookup; it must raise to signal an unresolvable place.
    """
    spec = registry.get(call.function)
    if spec is None:
        return Validation("syntax_invalid", f"unknown function {call.function!r}")
    expected = spec.param_names()
    got = call.argument_names()
    if len(set(got)) != len(got):
        return Validation("syntax_invalid", "duplicate parameter")
    unknown = [name for name in got if name not in expected]
    if unknown:
        return Validation("syntax_invalid", f"unknown parameter {unknown[0]!r}")
    missing = [
        p.name for p in spec.params if p.required and p.name not in got
    ]
    if missing:
        return Validation("syntax_invalid", f"missing parameter {missing[0]!r}")
    # Present parameters must follow spec order (optional ones may be absent).
    order = [expected.index(name) for name in got]
    if order != sorted(order):
        return Validation("syntax_invalid", "parameters out of order")
    for param in spec.params:
        value = call.get(param.name)
        if value is None or param.choices is None:
            continue
        if value not in param.choices:
            return Validation(
                "syntax_invalid",
                f"illegal value {value!r} for parameter {param.name!r}",
            )
    location = call.get("location")
    if location is not None and resolve is not None:
        try:
            resolve(location)
        except Exception as exc:
            return Validation("location_invalid", str(exc))
    return VALID
