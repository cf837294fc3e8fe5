"""Accessibility data store: ingestion, place-name resolution and the query API.

The store holds two tables loaded from delimiter-separated files:

* access records -- one row per (origin point, service category, travel mode)
  with the distance in kilometres and travel time in minutes to the nearest
  service of that category,
* the gazetteer -- the canonical name -> coordinate index of known places.

Both become immutable after :func:`ingest`; queries are safe to run from any
number of threads.
"""

from __future__ import annotations

import csv
import logging
import math
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np
from scipy.spatial import cKDTree

from .protocol import ToolCall, ToolResult

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088  # IUGG mean earth radius


class StoreError(Exception):
    """Base class for store failures."""


class LocationNotFound(StoreError):
    """No gazetteer entry matches the requested place name."""


class AmbiguousLocation(StoreError):
    """A name prefix matches several gazetteer entries."""

    def __init__(self, name: str, candidates: Sequence[str]):
        self.candidates = list(candidates)
        super().__init__(
            f"ambiguous location {name!r}: matches {', '.join(self.candidates)}"
        )


class NoDataForQuery(StoreError):
    """The store holds no record for the requested (category, mode) pair."""


class InvalidArgument(StoreError):
    """A query argument is outside its documented domain."""


class EmptyDataset(StoreError):
    """Ingest produced zero usable access records."""


class Category(str, Enum):
    HOSPITAL = "hospital"
    SUPERMARKET = "supermarket"
    PHARMACY = "pharmacy"

    @classmethod
    def parse(cls, text: str) -> "Category":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidArgument(f"unknown category {text!r}") from None


class TravelMode(str, Enum):
    WALK = "walk"
    BIKE = "bike"
    DRIVE = "drive"

    @classmethod
    def parse(cls, text: str) -> "TravelMode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidArgument(f"unknown travel mode {text!r}") from None


# Tie-break precedence when two modes score identically.
MODE_PRECEDENCE = {TravelMode.WALK: 0, TravelMode.BIKE: 1, TravelMode.DRIVE: 2}

METRICS = ("distance", "time")


@dataclass(frozen=True)
class GeoPoint:
    """WGS-84 coordinate pair in degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise InvalidArgument(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise InvalidArgument(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class AccessRecord:
    origin: GeoPoint
    category: Category
    mode: TravelMode
    distance_km: float
    time_min: float

    def __post_init__(self):
        if self.distance_km < 0:
            raise InvalidArgument("distance_km must be non-negative")
        if self.time_min < 0:
            raise InvalidArgument("time_min must be non-negative")

    def metric(self, name: str) -> float:
        if name == "distance":
            return self.distance_km
        if name == "time":
            return self.time_min
        raise InvalidArgument(f"unknown metric {name!r}")


@dataclass(frozen=True)
class GazetteerEntry:
    name: str
    point: GeoPoint
    population: Optional[int] = None


@dataclass(frozen=True)
class ClosestResult:
    """Nearest-record payload; both metrics travel together on the wire."""

    distance: float
    time: float
    matched_origin: GeoPoint


@dataclass(frozen=True)
class ThresholdMatch:
    entry: GazetteerEntry
    value: float


@dataclass(frozen=True)
class ModeComparison:
    ranking: tuple  # ordered (TravelMode, value) pairs, best first
    missing: tuple  # modes with no data


@dataclass
class IngestReport:
    records_accepted: int = 0
    records_rejected: int = 0
    gazetteer_accepted: int = 0
    gazetteer_rejected: int = 0
    rejections: list = field(default_factory=list)  # (source, line_no, reason)

    def reject(self, source: str, line_no: int, reason: str) -> None:
        self.rejections.append((source, line_no, reason))
        logger.warning("%s line %d rejected: %s", source, line_no, reason)
        if source == "dataset":
            self.records_rejected += 1
        else:
            self.gazetteer_rejected += 1


def canonicalize_name(name: str) -> str:
    """Case-fold, trim and collapse internal whitespace; diacritics survive."""
    folded = unicodedata.normalize("NFC", name).casefold()
    return " ".join(folded.split())


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance on the IUGG mean sphere, in kilometres."""
    lat1, lon1, lat2, lon2 = map(
        math.radians, (a.lat, a.lon, b.lat, b.lon)
    )
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat * sin_dlat + math.cos(lat1) * math.cos(lat2) * sin_dlon * sin_dlon
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def _to_unit_xyz(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lat_r = np.radians(lats)
    lon_r = np.radians(lons)
    cos_lat = np.cos(lat_r)
    return np.column_stack(
        (cos_lat * np.cos(lon_r), cos_lat * np.sin(lon_r), np.sin(lat_r))
    )


class _RecordIndex:
    """KD-tree over the origins of one (category, mode) slice.

    Points live on the unit sphere; Euclidean chord distance is monotone in
    great-circle distance, so the chord nearest neighbour is the haversine
    nearest neighbour. Ties resolve to the lexicographically smallest
    (lat, lon) origin.
    """

    def __init__(self, records: Sequence[AccessRecord]):
        self.records = list(records)
        lats = np.array([r.origin.lat for r in self.records])
        lons = np.array([r.origin.lon for r in self.records])
        self._tree = cKDTree(_to_unit_xyz(lats, lons))

    def nearest(self, point: GeoPoint) -> AccessRecord:
        xyz = _to_unit_xyz(np.array([point.lat]), np.array([point.lon]))[0]
        chord, _ = self._tree.query(xyz, k=1)
        # Inflate the radius a hair so exact ties all come back, then settle
        # them with the scalar haversine and the documented tie-break.
        candidates = self._tree.query_ball_point(xyz, r=chord * (1.0 + 1e-9) + 1e-12)
        best = min(
            (self.records[i] for i in candidates),
            key=lambda r: (haversine_km(point, r.origin), r.origin.lat, r.origin.lon),
        )
        return best


Source = Union[str, Path, TextIO, Iterable[str]]

DATASET_COLUMNS = ["lat", "lon", "category", "mode", "distance_km", "time_min"]
GAZETTEER_COLUMNS = ["name", "lat", "lon", "population"]


def _open_rows(source: Source, delimiter: str):
    if isinstance(source, (str, Path)):
        handle = open(source, "r", encoding="utf-8", newline="")
        return csv.reader(handle, delimiter=delimiter), handle
    return csv.reader(source, delimiter=delimiter), None


def _check_header(row: Sequence[str], expected: Sequence[str], source: str) -> None:
    got = [c.strip().lower() for c in row]
    if got != list(expected):
        raise StoreError(
            f"{source} header mismatch: expected {list(expected)}, got {got}"
        )


class Store:
    """Immutable queryable view over access records and the gazetteer."""

    def __init__(
        self,
        records: Sequence[AccessRecord],
        gazetteer: Sequence[GazetteerEntry],
        ingest_report: Optional[IngestReport] = None,
    ):
        if not records:
            raise EmptyDataset("empty dataset: no access records")
        self.records = tuple(records)
        self.gazetteer = tuple(gazetteer)
        self.ingest_report = ingest_report or IngestReport(
            records_accepted=len(records), gazetteer_accepted=len(gazetteer)
        )
        self._by_name = {canonicalize_name(e.name): e for e in self.gazetteer}
        self._indexes: dict = {}
        grouped: dict = {}
        for record in self.records:
            grouped.setdefault((record.category, record.mode), []).append(record)
        for key, group in grouped.items():
            self._indexes[key] = _RecordIndex(group)

    # -- resolution ---------------------------------------------------------

    def resolve_location(self, name: str) -> GeoPoint:
        return self.resolve_entry(name).point

    def resolve_entry(self, name: str) -> GazetteerEntry:
        """Exact canonical match first, unique-prefix second, error otherwise.

        No fuzzy matching on purpose: misspellings must fail so downstream
        evaluation can classify them as location errors.
        """
        key = canonicalize_name(name)
        if not key:
            raise LocationNotFound("empty place name")
        entry = self._by_name.get(key)
        if entry is not None:
            return entry
        matches = sorted(k for k in self._by_name if k.startswith(key))
        if not matches:
            raise LocationNotFound(f"unknown location {name!r}")
        if len(matches) > 1:
            raise AmbiguousLocation(name, [self._by_name[k].name for k in matches])
        return self._by_name[matches[0]]

    # -- geometry -----------------------------------------------------------

    def nearest_record(
        self, category: Category, mode: TravelMode, point: GeoPoint
    ) -> AccessRecord:
        index = self._indexes.get((category, mode))
        if index is None:
            raise NoDataForQuery(f"no records for ({category.value}, {mode.value})")
        return index.nearest(point)

    # -- query API (the functions tool calls target) -------------------------

    def get_closest_distance_time(
        self,
        category: Category,
        mode: TravelMode,
        location: str,
        metric_to_extract: str = "distance",
    ) -> ClosestResult:
        if metric_to_extract not in METRICS:
            raise InvalidArgument(f"unknown metric {metric_to_extract!r}")
        point = self.resolve_location(location)
        record = self.nearest_record(category, mode, point)
        return ClosestResult(
            distance=record.distance_km,
            time=record.time_min,
            matched_origin=record.origin,
        )

    def list_within_threshold(
        self,
        category: Category,
        mode: TravelMode,
        metric: str,
        threshold: float,
        population_max: Optional[int] = None,
    ) -> list:
        """Gazetteer entries whose nearest-record metric is within threshold.

        Entries without a known population are excluded whenever a
        population_max filter is given.
        """
        if metric not in METRICS:
            raise InvalidArgument(f"unknown metric {metric!r}")
        if threshold < 0:
            raise InvalidArgument("threshold must be non-negative")
        matches = []
        for entry in self.gazetteer:
            if population_max is not None:
                if entry.population is None or entry.population > population_max:
                    continue
            record = self.nearest_record(category, mode, entry.point)
            value = record.metric(metric)
            if value <= threshold:
                matches.append(ThresholdMatch(entry=entry, value=value))
        matches.sort(key=lambda m: (m.value, canonicalize_name(m.entry.name)))
        return matches

    def compare_modes(
        self, category: Category, location: str, metric: str = "time"
    ) -> ModeComparison:
        if metric not in METRICS:
            raise InvalidArgument(f"unknown metric {metric!r}")
        point = self.resolve_location(location)
        ranking = []
        missing = []
        for mode in TravelMode:
            try:
                record = self.nearest_record(category, mode, point)
            except NoDataForQuery:
                missing.append(mode)
                continue
            ranking.append((mode, record.metric(metric)))
        if not ranking:
            raise NoDataForQuery(
                f"no mode has data for category {category.value!r}"
            )
        ranking.sort(key=lambda pair: (pair[1], MODE_PRECEDENCE[pair[0]]))
        return ModeComparison(ranking=tuple(ranking), missing=tuple(missing))


def _parse_access_row(row: Sequence[str]) -> AccessRecord:
    if len(row) != len(DATASET_COLUMNS):
        raise ValueError(f"expected {len(DATASET_COLUMNS)} columns, got {len(row)}")
    lat, lon = float(row[0]), float(row[1])
    return AccessRecord(
        origin=GeoPoint(lat, lon),
        category=Category.parse(row[2]),
        mode=TravelMode.parse(row[3]),
        distance_km=float(row[4]),
        time_min=float(row[5]),
    )


def _parse_gazetteer_row(row: Sequence[str]) -> GazetteerEntry:
    if len(row) != len(GAZETTEER_COLUMNS):
        raise ValueError(f"expected {len(GAZETTEER_COLUMNS)} columns, got {len(row)}")
    name = row[0].strip()
    if not name:
        raise ValueError("empty place name")
    population: Optional[int] = None
    if row[3].strip():
        population = int(row[3])
        if population < 0:
            raise ValueError("population must be non-negative")
    return GazetteerEntry(
        name=name, point=GeoPoint(float(row[1]), float(row[2])), population=population
    )


def ingest(
    dataset_source: Source,
    gazetteer_source: Source,
    delimiter: str = ",",
) -> Store:
    """Load both tables, rejecting malformed or duplicate rows row-by-row.

    A rejected row never aborts the run; zero surviving access records do.
    """
    report = IngestReport()

    records: list = []
    seen_keys: set = set()
    reader, handle = _open_rows(dataset_source, delimiter)
    try:
        header = next(reader, None)
        if header is None:
            raise EmptyDataset("empty dataset: missing header")
        _check_header(header, DATASET_COLUMNS, "dataset")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                record = _parse_access_row(row)
            except (ValueError, InvalidArgument) as exc:
                report.reject("dataset", line_no, str(exc))
                continue
            key = (record.origin.lat, record.origin.lon, record.category, record.mode)
            if key in seen_keys:
                report.reject("dataset", line_no, "duplicate (origin, category, mode)")
                continue
            seen_keys.add(key)
            records.append(record)
            report.records_accepted += 1
    finally:
        if handle is not None:
            handle.close()

    entries: list = []
    seen_names: set = set()
    reader, handle = _open_rows(gazetteer_source, delimiter)
    try:
        header = next(reader, None)
        if header is not None:
            _check_header(header, GAZETTEER_COLUMNS, "gazetteer")
            for line_no, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                try:
                    entry = _parse_gazetteer_row(row)
                except (ValueError, InvalidArgument) as exc:
                    report.reject("gazetteer", line_no, str(exc))
                    continue
                key = canonicalize_name(entry.name)
                if key in seen_names:
                    report.reject("gazetteer", line_no, f"duplicate name {entry.name!r}")
                    continue
                seen_names.add(key)
                entries.append(entry)
                report.gazetteer_accepted += 1
    finally:
        if handle is not None:
            handle.close()

    if not records:
        raise EmptyDataset("empty dataset: no valid access records")
    return Store(records, entries, report)


# -- call execution -----------------------------------------------------------


class ToolExecutionError(StoreError):
    """A parsed call could not be executed against the store."""

    def __init__(self, message: str, kind: str = "bad_call"):
        self.kind = kind
        super().__init__(message)


def _require(call: ToolCall, name: str) -> str:
    value = call.get(name)
    if value is None:
        raise ToolExecutionError(f"missing argument {name!r}", kind="bad_call")
    return value


def execute_call(store: Store, call: ToolCall) -> ToolResult:
    """Run a tool call by argument name (deliberately order-lenient).

    Strict parameter-order policing belongs to validation and scoring; the
    executor runs anything runnable so the recovery loop can still make
    progress on misordered calls.
    """
    try:
        if call.function == "get_closest_distance_time":
            result = store.get_closest_distance_time(
                category=Category.parse(_require(call, "category")),
                mode=TravelMode.parse(_require(call, "mode")),
                location=_require(call, "location"),
                metric_to_extract=_require(call, "metric_to_extract"),
            )
            return ToolResult(
                fields=(("distance", result.distance), ("time", result.time))
            )
        if call.function == "list_within_threshold":
            raw_population = call.get("population_max")
            try:
                threshold = float(_require(call, "threshold"))
                population_max = (
                    int(raw_population) if raw_population is not None else None
                )
            except ValueError as exc:
                raise ToolExecutionError(str(exc), kind="bad_call") from exc
            matches = store.list_within_threshold(
                category=Category.parse(_require(call, "category")),
                mode=TravelMode.parse(_require(call, "mode")),
                metric=_require(call, "metric"),
                threshold=threshold,
                population_max=population_max,
            )
            return ToolResult(
                fields=tuple((m.entry.name, m.value) for m in matches)
            )
        if call.function == "compare_modes":
            comparison = store.compare_modes(
                category=Category.parse(_require(call, "category")),
                location=_require(call, "location"),
                metric=_require(call, "metric"),
            )
            return ToolResult(
                fields=tuple((mode.value, value) for mode, value in comparison.ranking)
            )
    except LocationNotFound as exc:
        raise ToolExecutionError(str(exc), kind="location_not_found") from exc
    except AmbiguousLocation as exc:
        raise ToolExecutionError(str(exc), kind="location_not_found") from exc
    except NoDataForQuery as exc:
        raise ToolExecutionError(str(exc), kind="no_data") from exc
    except InvalidArgument as exc:
        raise ToolExecutionError(str(exc), kind="invalid_argument") from exc
    raise ToolExecutionError(
        f"unknown function {call.function!r}", kind="unknown_function"
    )


def build_executor(store: Store):
    """Bind the store into the ToolCall -> ToolResult function the loop needs."""

    def executor(call: ToolCall) -> ToolResult:
        return execute_call(store, call)

    return executor
