#!/usr/bin/env python3
"""The embedded call grammar: parse, serialize and intercept in a stream.

Calls ride inside answers as <API>name(k="v", ...) -> {payload}</API> spans.
Serialization is canonical, parsing round-trips exactly, and the stream
scanner finds the pause point even when chunks split the markers.
"""

from geoqa import StreamScanner, ToolCall, ToolResult, parse_call, serialize_call
from geoqa.protocol import CallReady, PlainText, default_registry, validate_call

wire = (
    '<API>get_closest_distance_time(category="hospital", mode="drive", '
    'location="Abadiño, Durango", metric_to_extract="distance") -> '
    '{"distance": 0.402, "time": 0.537}</API>'
)

print("-- parse -----------------------------------------------------------")
call, result = parse_call(wire)
print(f"function : {call.function}")
for name, value in call.arguments:
    print(f"  {name} = {value!r}")
print(f"result   : {dict(result.fields)}")
print(f"round-trips byte-exactly: {serialize_call(call, result) == wire}")

print("\n-- canonical form --------------------------------------------------")
messy = ToolCall("compare_modes", (("category", "pharmacy"), ("location", 'San "Q"'),
                                   ("metric", "time")))
print(serialize_call(messy, ToolResult((("walk", 12.5), ("note", "partial")))))

print("\n-- validation -------------------------------------------------------")
registry = default_registry()
for candidate in (
    call,
    ToolCall(call.function, tuple((k, "fly" if k == "mode" else v)
                                  for k, v in call.arguments)),
    ToolCall(call.function, call.arguments[:-1]),
):
    verdict = validate_call(candidate, registry)
    print(f"  {verdict.kind:15s} {verdict.detail}")

print("\n-- streaming interception -------------------------------------------")
chunks = ["The answer is <AP", 'I>compare_modes(category="hospital", ',
          'location="Durango", metric="time")', " ignored tail"]
scanner = StreamScanner()
for chunk in chunks:
    for event in scanner.feed(chunk):
        if isinstance(event, PlainText):
            print(f"  text  : {event.text!r}")
        elif isinstance(event, CallReady):
            print(f"  pause : execute {event.call.function} now, "
                  "inject the result, resume generation")
