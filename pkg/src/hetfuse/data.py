"""Dataset container and the two on-disk formats (avian tables, Flu-Japan matrices).

Avian format (a directory):

* ``cases.csv``      ``case_id,week,location_id``
* ``locations.csv``  ``location_id,lat,lon``  or just ``location_id`` plus
  ``distances.csv`` (header ``location_id,<id_1>,...,<id_N>``, km)
* ``abundance.csv``  ``location_id,week,population`` (every location-week)
* ``sequences.tsv``  optional, ``case_id<TAB>aligned bases``

Flu-Japan format (a directory):

* ``counts.csv``     header ``location_id,<week_1>,...``; one row per prefecture
* ``adjacency.csv``  header ``location_id,<id_1>,...``; 0/1 entries
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .genetics import AlignedSequence, read_sequences, write_sequences

EARTH_RADIUS_KM = 6371.0088


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Case:
    case_id: str
    week: int
    location: int


@dataclass
class Dataset:
    location_ids: list[str]
    weeks: list[int]
    infected: np.ndarray  # (W, N) counts
    population: np.ndarray  # (W, N)
    cases: list[Case]
    distances: np.ndarray | None = None  # (N, N) km
    adjacency: np.ndarray | None = None  # (N, N) binary; replaces the kernel when set
    coords: np.ndarray | None = None  # (N, 2) lat, lon
    sequences: dict[str, AlignedSequence] = field(default_factory=dict)
    unit_case_features: bool = False  # simulated cases carry a constant feature 1

    @property
    def n_locations(self) -> int:
        return len(self.location_ids)

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    def week_index(self, week: int) -> int:
        return week - self.weeks[0]

    def subset_weeks(self, start: int, stop: int) -> "Dataset":
        """Weeks ``weeks[start:stop]`` with their cases."""
        keep = set(self.weeks[start:stop])
        return Dataset(
            location_ids=list(self.location_ids),
            weeks=self.weeks[start:stop],
            infected=self.infected[start:stop].copy(),
            population=self.population[start:stop].copy(),
            cases=[c for c in self.cases if c.week in keep],
            distances=self.distances,
            adjacency=self.adjacency,
            coords=self.coords,
            sequences=self.sequences,
            unit_case_features=self.unit_case_features,
        )


def haversine_matrix(coords: np.ndarray) -> np.ndarray:
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    a = np.sin(dlat / 2) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def _read_csv(path: Path, required: list[str]) -> list[tuple[int, dict[str, str]]]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return [(i + 2, row) for i, row in enumerate(reader)]


def _parse(path: Path, lineno: int, name: str, raw: str | None, kind):
    try:
        if raw is None:
            raise ValueError("empty")
        value = kind(raw)
        if kind is float and not math.isfinite(value):
            raise ValueError("non-finite")
        return value
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad value {raw!r} in field '{name}'") from None


def _read_matrix(path: Path, ids: list[str] | None) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "location_id":
        raise DataError(f"{path}:1: header must start with 'location_id'")
    col_ids = rows[0][1:]
    row_ids = []
    values = []
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != len(col_ids) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(col_ids) + 1} fields, got {len(row)}")
        row_ids.append(row[0])
        values.append([_parse(path, lineno, col_ids[j], v, float) for j, v in enumerate(row[1:])])
    if row_ids != col_ids:
        raise DataError(f"{path}: row ids and column ids differ")
    if ids is not None and row_ids != ids:
        raise DataError(f"{path}: location ids do not match locations.csv order")
    return row_ids, np.array(values, dtype=np.float64).reshape(len(row_ids), len(col_ids))


def _check_weeks(weeks: list[int], source: str) -> None:
    for a, b in zip(weeks, weeks[1:]):
        if b != a + 1:
            raise DataError(f"{source}: week gap between {a} and {b}")


def load_avian(root: str | Path) -> Dataset:
    root = Path(root)
    loc_path = root / "locations.csv"
    loc_rows = _read_csv(loc_path, ["location_id"])
    ids = [row["location_id"] for _, row in loc_rows]
    if len(set(ids)) != len(ids):
        raise DataError(f"{loc_path}: duplicate location_id")
    if not ids:
        raise DataError(f"{loc_path}: no locations")
    index = {lid: i for i, lid in enumerate(ids)}

    coords = None
    dist_path = root / "distances.csv"
    has_coords = loc_rows and "lat" in loc_rows[0][1] and "lon" in loc_rows[0][1]
    if has_coords and all(row.get("lat") not in (None, "") for _, row in loc_rows):
        coords = np.array(
            [[_parse(loc_path, n, "lat", r["lat"], float), _parse(loc_path, n, "lon", r["lon"], float)] for n, r in loc_rows]
        )
    if dist_path.exists():
        _, distances = _read_matrix(dist_path, ids)
    elif coords is not None:
        distances = haversine_matrix(coords)
    else:
        raise DataError(f"{loc_path}: need lat/lon columns or a distances.csv")

    ab_path = root / "abundance.csv"
    ab_rows = _read_csv(ab_path, ["location_id", "week", "population"])
    entries = {}
    for n, row in ab_rows:
        lid = row["location_id"]
        if lid not in index:
            raise DataError(f"{ab_path}:{n}: unknown location_id {lid!r} in field 'location_id'")
        week = _parse(ab_path, n, "week", row["week"], int)
        pop = _parse(ab_path, n, "population", row["population"], float)
        if pop < 0:
            raise DataError(f"{ab_path}:{n}: negative value in field 'population'")
        entries[(index[lid], week)] = pop
    weeks = sorted({w for _, w in entries})
    if not weeks:
        raise DataError(f"{ab_path}: no rows")
    _check_weeks(weeks, str(ab_path))
    population = np.zeros((len(weeks), len(ids)))
    for i in range(len(ids)):
        for t, w in enumerate(weeks):
            if (i, w) not in entries:
                raise DataError(f"{ab_path}: missing population for location {ids[i]!r} week {w}")
            population[t, i] = entries[(i, w)]

    case_path = root / "cases.csv"
    cases = []
    seen = set()
    for n, row in _read_csv(case_path, ["case_id", "week", "location_id"]):
        cid = row["case_id"]
        if cid in seen:
            raise DataError(f"{case_path}:{n}: duplicate case_id {cid!r}")
        seen.add(cid)
        week = _parse(case_path, n, "week", row["week"], int)
        lid = row["location_id"]
        if lid not in index:
            raise DataError(f"{case_path}:{n}: case {cid!r} references unknown location {lid!r}")
        if not weeks[0] <= week <= weeks[-1]:
            raise DataError(f"{case_path}:{n}: case {cid!r} week {week} outside abundance range")
        cases.append(Case(cid, week, index[lid]))
    infected = np.zeros_like(population)
    for c in cases:
        infected[c.week - weeks[0], c.location] += 1

    sequences = {}
    seq_path = root / "sequences.tsv"
    if seq_path.exists():
        for rec in read_sequences(seq_path):
            if rec.id not in seen:
                raise DataError(f"{seq_path}: sequence {rec.id!r} has no matching case")
            sequences[rec.id] = rec

    return Dataset(ids, weeks, infected, population, cases, distances=distances,
                   coords=coords, sequences=sequences)


def load_flujapan(root: str | Path, case_cap: int | None = None) -> Dataset:
    """Counts + binary adjacency; every infection becomes a unit-feature case node.

    ``case_cap`` limits simulated cases per location-week (counts are kept).
    """
    root = Path(root)
    cpath = root / "counts.csv"
    if not cpath.exists():
        raise DataError(f"{cpath}: file not found")
    with open(cpath, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "location_id":
        raise DataError(f"{cpath}:1: header must start with 'location_id'")
    weeks = [_parse(cpath, 1, "week", w, int) for w in rows[0][1:]]
    _check_weeks(weeks, str(cpath))
    ids = []
    counts = []
    for n, row in enumerate(rows[1:], 2):
        if len(row) != len(weeks) + 1:
            raise DataError(f"{cpath}:{n}: expected {len(weeks) + 1} fields, got {len(row)}")
        ids.append(row[0])
        vals = [_parse(cpath, n, str(weeks[j]), v, float) for j, v in enumerate(row[1:])]
        if any(v < 0 or v != int(v) for v in vals):
            raise DataError(f"{cpath}:{n}: counts must be non-negative integers")
        counts.append(vals)
    infected = np.array(counts, dtype=np.float64).T  # (W, N)
    _, adjacency = _read_matrix(root / "adjacency.csv", ids)
    if not np.all(np.isin(adjacency, (0.0, 1.0))):
        raise DataError(f"{root / 'adjacency.csv'}: entries must be 0 or 1")
    if not np.array_equal(adjacency, adjacency.T):
        raise DataError(f"{root / 'adjacency.csv'}: adjacency must be symmetric")
    adjacency = adjacency.copy()
    np.fill_diagonal(adjacency, 0.0)
    cases = []
    for t, w in enumerate(weeks):
        for i in range(len(ids)):
            c = int(infected[t, i])
            if case_cap is not None:
                c = min(c, case_cap)
            cases.extend(Case(f"{ids[i]}_w{w}_{k}", w, i) for k in range(c))
    return Dataset(ids, weeks, infected, np.zeros_like(infected), cases,
                   adjacency=adjacency, unit_case_features=True)


def load_dataset(path: str | Path, format: str = "avian", **kwargs) -> Dataset:
    if format == "avian":
        return load_avian(path)
    if format == "flujapan":
        return load_flujapan(path, **kwargs)
    raise DataError(f"unknown dataset format {format!r}")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_avian(ds: Dataset, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "locations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ds.coords is not None:
            w.writerow(["location_id", "lat", "lon"])
            for lid, (lat, lon) in zip(ds.location_ids, ds.coords):
                w.writerow([lid, _fmt(lat), _fmt(lon)])
        else:
            w.writerow(["location_id"])
            w.writerows([lid] for lid in ds.location_ids)
    if ds.coords is None:
        with open(root / "distances.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["location_id", *ds.location_ids])
            for lid, row in zip(ds.location_ids, ds.distances):
                w.writerow([lid, *map(_fmt, row)])
    with open(root / "abundance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", "week", "population"])
        for i, lid in enumerate(ds.location_ids):
            for t, week in enumerate(ds.weeks):
                w.writerow([lid, week, _fmt(ds.population[t, i])])
    with open(root / "cases.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "week", "location_id"])
        for c in ds.cases:
            w.writerow([c.case_id, c.week, ds.location_ids[c.location]])
    if ds.sequences:
        write_sequences(root / "sequences.tsv", (ds.sequences[c.case_id] for c in ds.cases if c.case_id in ds.sequences))


def save_flujapan(ds: Dataset, root: str | Path) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "counts.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", *ds.weeks])
        for i, lid in enumerate(ds.location_ids):
            w.writerow([lid, *(int(v) for v in ds.infected[:, i])])
    with open(root / "adjacency.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", *ds.location_ids])
        for lid, row in zip(ds.location_ids, ds.adjacency):
            w.writerow([lid, *(int(v) for v in row)])
