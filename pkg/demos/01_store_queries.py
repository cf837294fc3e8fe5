#!/usr/bin/env python3
"""Walk through the data store: ingest the demo files and run each query.

The store answers three kinds of question: nearest service from a named
place, places under a metric threshold, and travel-mode comparisons.
"""

from pathlib import Path

from geoqa import Category, TravelMode, haversine_km, ingest
from geoqa.store import GeoPoint

DATA = Path(__file__).resolve().parent.parent / "data"

store = ingest(DATA / "access_demo.csv", DATA / "gazetteer_demo.csv")
report = store.ingest_report
print(f"ingested {report.records_accepted} access records, "
      f"{report.gazetteer_accepted} gazetteer places "
      f"({report.records_rejected + report.gazetteer_rejected} rows rejected)")

print("\n-- geometry ------------------------------------------------------")
durango = store.resolve_location("Durango")
elorrio = store.resolve_location("Elorrio")
print(f"Durango -> {durango}")
print(f"Durango to Elorrio: {haversine_km(durango, elorrio):.3f} km great circle")

print("\n-- nearest service ----------------------------------------------")
result = store.get_closest_distance_time(
    Category.HOSPITAL, TravelMode.DRIVE, "Abadiño, Durango"
)
print(f"nearest hospital by car from 'Abadiño, Durango': "
      f"{result.distance} km, {result.time} min "
      f"(record origin {result.matched_origin})")

print("\n-- threshold listing --------------------------------------------")
matches = store.list_within_threshold(
    Category.SUPERMARKET, TravelMode.BIKE, "time", threshold=6.0,
    population_max=5000,
)
print(f"small places within 6 min of a supermarket by bike: {len(matches)}")
for match in matches[:5]:
    print(f"  {match.entry.name:24s} {match.value:6.3f} min "
          f"(pop {match.entry.population})")

print("\n-- mode comparison ----------------------------------------------")
comparison = store.compare_modes(Category.PHARMACY, "Berriz", "time")
for mode, value in comparison.ranking:
    print(f"  {mode.value:6s} {value:8.3f} min")
if comparison.missing:
    print(f"  (no data for: {', '.join(m.value for m in comparison.missing)})")

print("\n-- resolution is strict ------------------------------------------")
for name in ("  duRANGO ", "Durnago"):
    try:
        store.resolve_location(name)
        print(f"  {name!r}: resolved")
    except Exception as exc:
        print(f"  {name!r}: {type(exc).__name__}: {exc}")
