import random
from pathlib import Path

import pytest


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {outcome}", flush=True)

from geoqa.store import (
    AccessRecord,
    Category,
    GazetteerEntry,
    GeoPoint,
    Store,
    TravelMode,
    ingest,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

# The documented wire-format example this whole artifact is anchored on.
FLAGSHIP_QUESTION = "What is the nearest hospital from Durango by drive?"
FLAGSHIP_CALL_TEXT = (
    '<API>get_closest_distance_time(category="hospital", mode="drive", '
    'location="Abadiño, Durango", metric_to_extract="distance") -> '
    '{"distance": 0.402, "time": 0.537}</API>'
)
FLAGSHIP_ANSWER = (
    "The closest hospital you can find is " + FLAGSHIP_CALL_TEXT + " 0.402km away."
)


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def demo_store() -> Store:
    return ingest(DATA_DIR / "access_demo.csv", DATA_DIR / "gazetteer_demo.csv")


def make_random_store(
    n_records: int = 200,
    n_places: int = 20,
    seed: int = 7,
    categories=tuple(Category),
    modes=tuple(TravelMode),
) -> Store:
    """A reproducible store with uniformly scattered origins and places."""
    rng = random.Random(seed)
    records = []
    seen = set()
    while len(records) < n_records:
        lat = round(rng.uniform(43.0, 43.3), 5)
        lon = round(rng.uniform(-2.8, -2.4), 5)
        category = rng.choice(categories)
        mode = rng.choice(modes)
        key = (lat, lon, category, mode)
        if key in seen:
            continue
        seen.add(key)
        records.append(
            AccessRecord(
                origin=GeoPoint(lat, lon),
                category=category,
                mode=mode,
                distance_km=round(rng.uniform(0.05, 25.0), 3),
                time_min=round(rng.uniform(0.5, 120.0), 3),
            )
        )
    gazetteer = [
        GazetteerEntry(
            name=f"Place {i:03d}",
            point=GeoPoint(
                round(rng.uniform(43.0, 43.3), 5), round(rng.uniform(-2.8, -2.4), 5)
            ),
            population=rng.randint(50, 30000) if rng.random() < 0.7 else None,
        )
        for i in range(n_places)
    ]
    return Store(records, gazetteer)
