#!/usr/bin/env python3
"""Record the golden HTTP responses the acceptance suite compares against.

Re-run after any deliberate change to the endpoint shapes; wall-clock fields
are normalized to zero, everything else must stay byte-stable.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from fastapi.testclient import TestClient  # noqa: E402

from geoqa.service import build_service, create_app, load_config  # noqa: E402


def normalize(payload):
    if isinstance(payload, dict):
        return {
            key: (0.0 if key.endswith("_ms") and isinstance(value, (int, float))
                  else normalize(value))
            for key, value in payload.items()
        }
    if isinstance(payload, list):
        return [normalize(item) for item in payload]
    return payload


def main() -> None:
    config = load_config(ROOT / "data" / "service_config.yaml", env={})
    service = build_service(config)
    client = TestClient(create_app(service))

    client.post("/query", json={"question": "Write me a poem about the sea"})
    question = "What is the nearest hospital from Durango?"
    first = client.post("/query", json={"question": question}).json()
    second = client.post("/query", json={"question": question}).json()
    golden = {
        "health": normalize(client.get("/health").json()),
        "query": normalize(first),
        "query_cached": normalize(second),
        "templates": normalize(client.get("/templates").json()),
        "stats": normalize(client.get("/stats").json()),
    }
    destination = ROOT / "tests" / "golden" / "http_golden.json"
    destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_text(
        json.dumps(golden, indent=2, ensure_ascii=False) + "\n", "utf-8"
    )
    print(f"golden file written: {destination}")


if __name__ == "__main__":
    main()
