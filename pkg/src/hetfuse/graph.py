"""Weekly bi-layer snapshots: a fixed location layer, a per-week case layer.

Spatial edges use a Gaussian kernel on km distances; genetic edges mirror the
kernel on K80 distance. Edges whose weight falls below ``w_min`` are dropped
purely to bound the edge count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .config import RunConfig
from .data import DataError, Dataset
from .genetics import GeneticDistanceMatrix, mean_offdiagonal, pairwise_distances, spectral_embed


class Edges(NamedTuple):
    pairs: np.ndarray  # (E, 2) int, i < j for undirected kinds
    weight: np.ndarray  # (E,)

    @classmethod
    def empty(cls) -> "Edges":
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros(0))

    def __len__(self):
        return len(self.weight)


@dataclass
class HeteroSnapshot:
    week: int
    location_ids: list[str]
    location_features: np.ndarray  # (N, 2) raw [infected, population]
    case_ids: list[str]
    case_location: np.ndarray  # (M,) home location index
    case_features: np.ndarray  # (M, g)
    spatial: Edges  # over location indices
    genetic: Edges  # over case indices
    location_inputs: np.ndarray | None = None  # normalized features fed to the model
    # parameter-free operators derived from the graph structure, memoized by key
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_locations(self) -> int:
        return len(self.location_ids)

    @property
    def n_cases(self) -> int:
        return len(self.case_ids)

    @property
    def assignment(self) -> Edges:
        pairs = np.stack([np.arange(self.n_cases), self.case_location], axis=1).astype(np.int64)
        return Edges(pairs.reshape(-1, 2), np.ones(self.n_cases))

    def model_inputs(self) -> np.ndarray:
        return self.location_features if self.location_inputs is None else self.location_inputs

    def cached(self, key, build):
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    def with_inputs(self, inputs: np.ndarray) -> "HeteroSnapshot":
        return replace(self, location_inputs=np.asarray(inputs, dtype=np.float64))


def spatial_weight(distance: float, sigma: float) -> float:
    if distance < 0:
        raise ValueError(f"negative distance {distance}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return math.exp(-(distance * distance) / (2.0 * sigma * sigma))


def _kernel_edges(dist: np.ndarray, sigma: float, w_min: float) -> Edges:
    n = dist.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    if iu.size == 0:
        return Edges.empty()
    w = np.exp(-(dist[iu, ju] ** 2) / (2.0 * sigma * sigma))
    keep = w >= w_min
    return Edges(np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64), w[keep])


def build_spatial_edges(distances: np.ndarray, sigma: float, w_min: float = 1e-3) -> Edges:
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 2 or distances.shape[0] != distances.shape[1]:
        raise ValueError(f"distance matrix must be square, got {distances.shape}")
    if not np.allclose(distances, distances.T, rtol=0, atol=1e-9):
        raise ValueError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(distances)) > 1e-9):
        raise ValueError("distance matrix must have a zero diagonal")
    if np.any(distances < 0):
        raise ValueError("negative distance")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return _kernel_edges(distances, sigma, w_min)


def adjacency_edges(adjacency: np.ndarray) -> Edges:
    iu, ju = np.triu_indices(adjacency.shape[0], k=1)
    keep = adjacency[iu, ju] > 0
    return Edges(np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64), adjacency[iu, ju][keep].astype(np.float64))


def build_genetic_edges(dist: GeneticDistanceMatrix | np.ndarray, sigma_g: float, w_min: float = 1e-3) -> Edges:
    """Gaussian kernel on K80 distance; undefined (inf) pairs never become edges."""
    if sigma_g <= 0:
        raise ValueError("sigma_g must be positive")
    d = dist.d if isinstance(dist, GeneticDistanceMatrix) else np.asarray(dist, dtype=np.float64)
    return _kernel_edges(d, sigma_g, w_min)


def _case_features(ds: Dataset, config: RunConfig) -> tuple[dict[str, np.ndarray], GeneticDistanceMatrix | None]:
    if ds.unit_case_features:
        return {c.case_id: np.ones(1) for c in ds.cases}, None
    sequenced = [ds.sequences[c.case_id] for c in ds.cases if c.case_id in ds.sequences]
    feats = {c.case_id: np.zeros(config.d_gen) for c in ds.cases}
    if not sequenced:
        return feats, None
    dist = pairwise_distances(sequenced, strict=False)
    m = len(sequenced)
    dim = min(config.d_gen, m - 1)
    if dim >= 1:
        emb = spectral_embed(dist, dim)
        for row, rec in zip(emb, sequenced):
            feats[rec.id][:dim] = row
    return feats, dist


def build_snapshots(ds: Dataset, config: RunConfig) -> list[HeteroSnapshot]:
    """One snapshot per week; case features come from one dataset-wide embedding."""
    weeks = ds.weeks
    for a, b in zip(weeks, weeks[1:]):
        if b != a + 1:
            raise DataError(f"week gap between {a} and {b}")
    n = ds.n_locations
    for c in ds.cases:
        if not 0 <= c.location < n:
            raise DataError(f"case {c.case_id!r} references unknown location index {c.location}")
        if not weeks[0] <= c.week <= weeks[-1]:
            raise DataError(f"case {c.case_id!r} has week {c.week} outside the dataset range")

    if ds.adjacency is not None:
        spatial = adjacency_edges(ds.adjacency)
    else:
        spatial = build_spatial_edges(ds.distances, config.sigma, config.w_min)

    feats, dist = _case_features(ds, config)
    gdim = next(iter(feats.values())).shape[0] if feats else (1 if ds.unit_case_features else config.d_gen)
    gindex = {} if dist is None else {cid: i for i, cid in enumerate(dist.ids)}
    sigma_g = config.sigma_g
    if sigma_g is None and dist is not None:
        sigma_g = mean_offdiagonal(dist.d) or 1.0

    by_week: dict[int, list] = {w: [] for w in weeks}
    for c in ds.cases:
        by_week[c.week].append(c)

    snapshots = []
    for t, week in enumerate(weeks):
        cases = by_week[week]
        genetic = Edges.empty()
        if config.use_genetic and dist is not None:
            local = [k for k, c in enumerate(cases) if c.case_id in gindex]
            if len(local) >= 2:
                idx = np.array([gindex[cases[k].case_id] for k in local])
                sub = build_genetic_edges(dist.d[np.ix_(idx, idx)], sigma_g, config.w_min)
                remap = np.array(local, dtype=np.int64)
                genetic = Edges(remap[sub.pairs], sub.weight)
        features = np.stack([ds.infected[t], ds.population[t]], axis=1)
        snapshots.append(HeteroSnapshot(
            week=week,
            location_ids=list(ds.location_ids),
            location_features=features,
            case_ids=[c.case_id for c in cases],
            case_location=np.array([c.location for c in cases], dtype=np.int64),
            case_features=np.array([feats[c.case_id] for c in cases]).reshape(len(cases), gdim),
            spatial=spatial,
            genetic=genetic,
        ))
    return snapshots


def hetero_adjacency(snap: HeteroSnapshot) -> np.ndarray:
    """Full (N+M) block adjacency: spatial, genetic and assignment blocks."""
    n, m = snap.n_locations, snap.n_cases
    a = np.zeros((n + m, n + m))
    if len(snap.spatial):
        i, j = snap.spatial.pairs.T
        a[i, j] = a[j, i] = snap.spatial.weight
    if len(snap.genetic):
        i, j = snap.genetic.pairs.T + n
        a[i, j] = a[j, i] = snap.genetic.weight
    if m:
        rows = n + np.arange(m)
        a[rows, snap.case_location] = 1.0
        a[snap.case_location, rows] = 1.0
    return a


def assignment_projection(snap: HeteroSnapshot) -> np.ndarray:
    """0/1 matrix mapping every node (locations then cases) to its home location."""
    n, m = snap.n_locations, snap.n_cases
    p = np.zeros((n + m, n))
    p[np.arange(n), np.arange(n)] = 1.0
    if m:
        p[n + np.arange(m), snap.case_location] = 1.0
    return p
