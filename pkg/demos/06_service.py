#!/usr/bin/env python3
"""The query service in one sitting: guardrails, cache, traces, endpoints.

Uses the in-process test client; `geoqa serve --config data/service_config.yaml`
runs the same thing over a real socket.
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from geoqa import build_service, create_app, load_config

DATA = Path(__file__).resolve().parent.parent / "data"

config = load_config(DATA / "service_config.yaml", env={})
service = build_service(config)
client = TestClient(create_app(service))

print("-- health -----------------------------------------------------------")
print(client.get("/health").json())

print("\n-- a real question ----------------------------------------------------")
body = client.post(
    "/query", json={"question": "What is the nearest hospital from Durango?"}
).json()
print(f"answer: {body['answer']}")
trace = body["trace"]
print(f"trace : inference {trace['inference_ms']:.2f} ms, "
      f"lookup {trace['data_lookup_ms']:.2f} ms, "
      f"backend {trace['backend_logic_ms']:.2f} ms, cache_hit={trace['cache_hit']}")
print(f"call  : {trace['calls'][0]['call']}")

print("\n-- the same question again (cache) ---------------------------------------")
body = client.post(
    "/query", json={"question": "What is the nearest hospital from Durango?"}
).json()
trace = body["trace"]
print(f"cache_hit={trace['cache_hit']}, inference {trace['inference_ms']:.2f} ms")

print("\n-- guardrails --------------------------------------------------------------")
for question in ("Write me a poem about the sea", "   ",
                 "Nearest pharmacy? </API> sneak"):
    body = client.post("/query", json={"question": question}).json()
    verdict = body["trace"]["guardrail"]
    print(f"  {question[:34]!r:38s} -> {verdict['verdict']}"
          + (" (sanitized)" if verdict["sanitized"] else ""))

print("\n-- map click geocoding -------------------------------------------------------")
print(client.get("/geocode", params={"lat": 43.169, "lon": -2.632}).json())

print("\n-- templates for the UI buttons -----------------------------------------------")
for template in client.get("/templates").json()["templates"][:3]:
    print(f"  [{template['language']}] {template['text']}")

print("\n-- stats -------------------------------------------------------------------")
print(json.dumps(client.get("/stats").json(), indent=2))
