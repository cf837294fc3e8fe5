#!/usr/bin/env python3
"""Build the committed demo data: access records, gazetteer, fixtures.

The shipped sample is schema-compatible synthetic data for the Durangaldea
region; regenerate with ``python3 scripts/make_demo_data.py``. One record is
planted so the flagship demo question has a stable, documented answer:
the (hospital, drive) record nearest to "Abadiño, Durango" reads
distance 0.402 km / time 0.537 min.
"""

from __future__ import annotations

import csv
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"

sys.path.insert(0, str(ROOT / "src"))

from geoqa.datagen import generate_answer, instantiate, load_templates  # noqa: E402
from geoqa.store import GeoPoint, haversine_km, ingest  # noqa: E402

SEED = 20240701

LAT_MIN, LAT_MAX = 43.03, 43.24
LON_MIN, LON_MAX = -2.76, -2.45

PLANTED_NAME = "Abadiño, Durango"
PLANTED_POINT = (43.1585, -2.6219)

REAL_PLACES = [
    ("Durango", 43.1689, -2.6324, 29629),
    ("Abadiño", 43.1530, -2.6103, 7440),
    (PLANTED_NAME, *PLANTED_POINT, None),
    ("Iurreta", 43.1790, -2.6400, 3812),
    ("Berriz", 43.1860, -2.5640, 4830),
    ("Elorrio", 43.1290, -2.5410, 7320),
    ("Atxondo", 43.1230, -2.5920, 1405),
    ("Izurtza", 43.1560, -2.6440, 274),
    ("Mañaria", 43.1380, -2.6590, 511),
    ("Garai", 43.1950, -2.6080, 304),
    ("Zaldibar", 43.1750, -2.5450, 3017),
    ("Amorebieta-Etxano", 43.2200, -2.7340, 19178),
    ("Otxandio", 43.0460, -2.6580, 1260),
    ("Matiena", 43.1600, -2.6190, 2100),
    ("Zelaieta", 43.1540, -2.6060, 980),
    ("Traña", 43.1620, -2.6250, 1500),
    ("Muntsaratz", 43.1480, -2.6030, 1900),
    ("Orobioko Auzoa", 43.1900, -2.6550, None),
    ("Ermua", 43.1870, -2.5030, 15900),
    ("Mallabia", 43.1770, -2.5260, 1180),
]

FIRST = [
    "Goiko", "Beheko", "Erdiko", "Iturri", "Mendi", "Ibai", "Zubi", "Errota",
    "Baso", "Landa", "Urki", "Arte", "Larra", "Olabe", "Muño", "Aretx",
    "Soloeta", "Bidarte", "Etxano", "Uribe",
]
SECOND = [
    "Auzoa", "Goiena", "Barrena", "Etxea", "Zelai", "Bidea", "Torre",
    "Iturria", "Mendieta", "Ondoa", "Aldea", "Berri", "Zahar", "Gaina",
    "Azpia", "Ibarra", "Ortu",
]

GAZETTEER_SIZE = 358

HOSPITALS = [(43.1710, -2.6350), (43.2220, -2.7320), (43.1300, -2.5450)]

MODE_PROFILES = {
    # mode: (route factor over crow distance, speed km/h)
    "walk": (1.22, 4.6),
    "bike": (1.30, 14.5),
    "drive": (1.42, 36.0),
}


def make_gazetteer(rng: random.Random) -> list:
    entries = list(REAL_PLACES)
    taken = {name.casefold() for name, *_ in entries}
    for first in FIRST:
        for second in SECOND:
            if len(entries) >= GAZETTEER_SIZE:
                break
            name = f"{first} {second}"
            if name.casefold() in taken:
                continue
            taken.add(name.casefold())
            lat = round(rng.uniform(LAT_MIN, LAT_MAX), 4)
            lon = round(rng.uniform(LON_MIN, LON_MAX), 4)
            population = rng.randint(40, 6000) if rng.random() < 0.55 else None
            entries.append((name, lat, lon, population))
        if len(entries) >= GAZETTEER_SIZE:
            break
    assert len(entries) == GAZETTEER_SIZE, len(entries)
    return entries


def make_facilities(rng: random.Random) -> dict:
    facilities = {"hospital": [GeoPoint(*p) for p in HOSPITALS]}
    facilities["supermarket"] = [
        GeoPoint(round(rng.uniform(LAT_MIN, LAT_MAX), 4),
                 round(rng.uniform(LON_MIN, LON_MAX), 4))
        for _ in range(12)
    ]
    facilities["pharmacy"] = [
        GeoPoint(round(rng.uniform(LAT_MIN, LAT_MAX), 4),
                 round(rng.uniform(LON_MIN, LON_MAX), 4))
        for _ in range(8)
    ]
    return facilities


def make_records(rng: random.Random, facilities: dict) -> list:
    rows = []
    cols, lines = 25, 24
    for i in range(cols):
        for j in range(lines):
            lat = LAT_MIN + (LAT_MAX - LAT_MIN) * (j + 0.5) / lines
            lon = LON_MIN + (LON_MAX - LON_MIN) * (i + 0.5) / cols
            lat = round(lat + rng.uniform(-0.0015, 0.0015), 5)
            lon = round(lon + rng.uniform(-0.0015, 0.0015), 5)
            origin = GeoPoint(lat, lon)
            for category, points in facilities.items():
                crow = min(haversine_km(origin, p) for p in points)
                for mode, (factor, speed) in MODE_PROFILES.items():
                    distance = round(crow * factor, 3)
                    minutes = round(distance / speed * 60.0, 3)
                    rows.append([lat, lon, category, mode, distance, minutes])
    rows.append([*PLANTED_POINT, "hospital", "drive", 0.402, 0.537])
    return rows


def write_csvs(gazetteer: list, records: list) -> None:
    with open(DATA / "access_demo.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "category", "mode", "distance_km", "time_min"])
        writer.writerows(records)
    with open(DATA / "gazetteer_demo.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "lat", "lon", "population"])
        for name, lat, lon, population in gazetteer:
            writer.writerow([name, lat, lon, population if population else ""])


def write_overpass_fixture() -> None:
    elements = []
    for i, (name, lat, lon, population) in enumerate(REAL_PLACES[:10]):
        tags = {"name": name, "place": "town" if population and population > 5000 else "village"}
        if population:
            tags["population"] = str(population)
        elements.append(
            {"type": "node", "id": 4_000_000 + i, "lat": lat, "lon": lon, "tags": tags}
        )
    # a way with a centroid instead of node coordinates
    elements.append(
        {
            "type": "way",
            "id": 5_000_001,
            "center": {"lat": 43.1712, "lon": -2.6338},
            "tags": {"name": "Tabira Auzoa", "place": "neighbourhood"},
        }
    )
    # nameless node: the importer must skip it
    elements.append({"type": "node", "id": 5_000_002, "lat": 43.2, "lon": -2.6, "tags": {}})
    # duplicate of Durango under different id: the importer keeps the first
    elements.append(
        {
            "type": "node",
            "id": 5_000_003,
            "lat": 43.1689,
            "lon": -2.6324,
            "tags": {"name": "Durango", "place": "town"},
        }
    )
    payload = {
        "version": 0.6,
        "generator": "Overpass API 0.7.62",
        "osm3s": {"timestamp_osm_base": "2025-11-04T10:00:00Z"},
        "elements": elements,
    }
    (DATA / "overpass_fixture.json").write_text(
        json.dumps(payload, indent=2, ensure_ascii=False) + "\n", "utf-8"
    )


def write_mock_fixtures() -> None:
    """Ground-truth-consistent completions for the demo mock backend."""
    store = ingest(DATA / "access_demo.csv", DATA / "gazetteer_demo.csv")
    templates = load_templates(DATA / "templates" / "en.yaml")
    by_id = {t.id: t for t in templates}
    fixtures = {}

    demo_entries = [e for e in store.gazetteer if e.name in ("Durango", "Elorrio")]
    for template_id in ("t01_nearest", "t04_time", "t07_compare_time"):
        for skeleton in instantiate([by_id[template_id]], demo_entries):
            pair = generate_answer(skeleton, store)
            fixtures[pair.question] = pair.answer

    # The flagship pair answers the modeless Durango question through the
    # planted record, exactly like the shipped documentation example;
    # registered last so it wins over the generic t01 instantiation.
    nearest_mode = by_id["t02_nearest_mode"]
    planted = [e for e in store.gazetteer if e.name == PLANTED_NAME]
    for skeleton in instantiate([nearest_mode], planted):
        values = dict(skeleton.slot_values)
        if values["category"] == "hospital" and values["mode"] == "drive":
            pair = generate_answer(skeleton, store)
            fixtures["What is the nearest hospital from Durango?"] = pair.answer
            fixtures["What is the nearest hospital from Durango by drive?"] = pair.answer
            fixtures[pair.question] = pair.answer

    (DATA / "mock_fixtures.json").write_text(
        json.dumps(fixtures, indent=2, ensure_ascii=False) + "\n", "utf-8"
    )


def main() -> None:
    DATA.mkdir(exist_ok=True)
    rng = random.Random(SEED)
    gazetteer = make_gazetteer(rng)
    facilities = make_facilities(rng)
    records = make_records(rng, facilities)
    write_csvs(gazetteer, records)
    write_overpass_fixture()
    write_mock_fixtures()
    print(f"gazetteer: {len(gazetteer)} places; dataset: {len(records)} records")


if __name__ == "__main__":
    main()
