#!/usr/bin/env python3
"""The pause-execute-resume loop with a deterministic mock backend.

Generation halts at the closing parenthesis of a call, the call runs against
the store, the canonical result span lands in the context, and generation
resumes. A second scenario shows the retry loop recovering from a misspelled
location.
"""

import json
from pathlib import Path

from geoqa import GenerationRequest, MockBackend, build_executor, ingest, run_tool_loop
from geoqa.adapter import build_retry_prompt
from geoqa.protocol import ToolCall
from geoqa.store import ToolExecutionError

DATA = Path(__file__).resolve().parent.parent / "data"

store = ingest(DATA / "access_demo.csv", DATA / "gazetteer_demo.csv")
executor = build_executor(store)
backend = MockBackend(json.loads((DATA / "mock_fixtures.json").read_text("utf-8")))

print("-- happy path ---------------------------------------------------------")
outcome = run_tool_loop(
    GenerationRequest(user_prompt="What is the nearest hospital from Durango?"),
    backend=backend,
    executor=executor,
)
print(outcome.final_text)
print(f"calls executed : {len(outcome.calls)}")
print(f"generation     : {outcome.timings['generation'] * 1000:.2f} ms")
print(f"execution      : {outcome.timings['execution'] * 1000:.2f} ms")

print("\n-- recovery from a bad location ----------------------------------------")
question = "How far is the hospital from Durnago?"
bad_call = ToolCall(
    "get_closest_distance_time",
    (("category", "hospital"), ("mode", "drive"),
     ("location", "Durnago"), ("metric_to_extract", "distance")),
)
backend.register(question, 'Let me check: <API>get_closest_distance_time('
                           'category="hospital", mode="drive", location="Durnago", '
                           'metric_to_extract="distance")')
try:
    executor(bad_call)
except ToolExecutionError as error:
    diagnostic = str(error)
retry_answer = (
    'Correction: <API>get_closest_distance_time(category="hospital", mode="drive", '
    'location="Durango", metric_to_extract="distance") -> '
    '{"distance": 1.321, "time": 2.202}</API> about 1.321km.'
)
backend.register(build_retry_prompt(question, bad_call, diagnostic), retry_answer)

outcome = run_tool_loop(
    GenerationRequest(user_prompt=question),
    backend=backend,
    executor=executor,
    retry_budget=1,
)
for i, (call, result) in enumerate(outcome.calls, start=1):
    state = "failed" if isinstance(result, ToolExecutionError) else "ok"
    print(f"  call {i} [{state}]: location={call.get('location')!r}")
print(outcome.final_text)
