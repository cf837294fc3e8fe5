"""Overpass API client and snapshot importer for building the gazetteer.

The live client is optional and off by default; every test replays recorded
response fixtures through the same normalization path. A recorded snapshot
can also be converted offline into a gazetteer file with
:func:`snapshot_to_gazetteer`.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Callable, List, Optional

import requests

from .store import (
    GAZETTEER_COLUMNS,
    GazetteerEntry,
    GeoPoint,
    InvalidArgument,
    LocationNotFound,
    canonicalize_name,
)

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"

PLACE_QUERY = """[out:json][timeout:{timeout}];
node["place"]["name"="{name}"];
out body 10;
"""


class OverpassError(Exception):
    pass


def _element_point(element: dict) -> Optional[GeoPoint]:
    if "lat" in element and "lon" in element:
        lat, lon = element["lat"], element["lon"]
    elif "center" in element:
        lat, lon = element["center"].get("lat"), element["center"].get("lon")
    else:
        return None
    try:
        return GeoPoint(float(lat), float(lon))
    except (TypeError, ValueError, InvalidArgument):
        return None


def normalize_elements(payload: dict) -> List[GazetteerEntry]:
    """Turn a raw Overpass JSON response into gazetteer entries.

    Elements without a usable name or coordinates are skipped; duplicate
    canonical names keep their first occurrence.
    """
    entries: List[GazetteerEntry] = []
    seen = set()
    for element in payload.get("elements", []):
        tags = element.get("tags") or {}
        name = (tags.get("name") or "").strip()
        point = _element_point(element)
        if not name or point is None:
            continue
        key = canonicalize_name(name)
        if key in seen:
            continue
        seen.add(key)
        population = None
        raw_population = tags.get("population")
        if raw_population:
            try:
                population = max(0, int(str(raw_population).replace(" ", "")))
            except ValueError:
                population = None
        entries.append(GazetteerEntry(name=name, point=point, population=population))
    return entries


class OverpassClient:
    """Place-name lookups against an Overpass endpoint.

    ``post`` is injectable so tests can replay recorded fixtures without any
    network access.
    """

    def __init__(
        self,
        endpoint: Optional[str] = None,
        timeout: float = 25.0,
        post: Optional[Callable] = None,
    ):
        self.endpoint = endpoint or DEFAULT_ENDPOINT
        self.timeout = timeout
        self._post = post or requests.post

    def query_place(self, name: str) -> GazetteerEntry:
        query = PLACE_QUERY.format(
            timeout=int(self.timeout), name=name.replace('"', '\\"')
        )
        try:
            response = self._post(
                self.endpoint, data={"data": query}, timeout=self.timeout
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise OverpassError(f"overpass request failed: {exc}") from exc
        entries = normalize_elements(payload)
        if not entries:
            raise LocationNotFound(f"overpass found nothing for {name!r}")
        return entries[0]


def load_snapshot(path) -> List[GazetteerEntry]:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    return normalize_elements(payload)


def snapshot_to_gazetteer(snapshot_path, gazetteer_path) -> int:
    """Convert a recorded Overpass response into a gazetteer file; returns rows."""
    entries = load_snapshot(snapshot_path)
    if not entries:
        raise OverpassError(f"snapshot {snapshot_path} holds no usable places")
    gazetteer_path = Path(gazetteer_path)
    with open(gazetteer_path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(GAZETTEER_COLUMNS)
        for entry in entries:
            writer.writerow(
                [
                    entry.name,
                    entry.point.lat,
                    entry.point.lon,
                    entry.population if entry.population is not None else "",
                ]
            )
    logger.info("wrote %d gazetteer rows to %s", len(entries), gazetteer_path)
    return len(entries)
