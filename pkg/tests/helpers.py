"""Fixtures shared by the test modules: hand-built snapshots, toy datasets, reference oracles."""

from __future__ import annotations

import numpy as np

from hetfuse import autograd as ag
from hetfuse.config import RunConfig
from hetfuse.data import Case, Dataset, haversine_matrix
from hetfuse.genetics import AlignedSequence
from hetfuse.graph import Edges, HeteroSnapshot, build_spatial_edges

TOY_COORDS = np.array([[40.0, -90.0], [40.05, -90.0], [40.0, -90.07], [40.1, -90.1]])


def random_snapshot(rng: np.random.Generator, n: int = 4, m: int = 3, case_dim: int = 2, week: int = 0,
                    genetic: bool = True, max_km: float = 20.0) -> HeteroSnapshot:
    d = np.triu(rng.uniform(0.0, max_km, (n, n)), 1)
    d = d + d.T
    spatial = build_spatial_edges(d, sigma=10.0, w_min=1e-3)
    gen = Edges.empty()
    if genetic and m >= 2:
        iu, ju = np.triu_indices(m, 1)
        keep = rng.random(iu.size) < 0.7
        gen = Edges(np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64), rng.uniform(0.05, 1.0, int(keep.sum())))
    return HeteroSnapshot(
        week=week,
        location_ids=[f"L{i}" for i in range(n)],
        location_features=rng.uniform(0.0, 3.0, (n, 2)),
        case_ids=[f"c{k}" for k in range(m)],
        case_location=rng.integers(0, n, m).astype(np.int64),
        case_features=rng.normal(size=(m, case_dim)),
        spatial=spatial,
        genetic=gen,
    )


def toy_dataset(seed: int = 3, weeks: int = 8, cases_per_week: int = 3, seq_len: int = 60) -> Dataset:
    """Four nearby locations, a fixed number of sequenced cases per week."""
    rng = np.random.default_rng(seed)
    n = len(TOY_COORDS)
    base = rng.integers(0, 4, seq_len)
    cases, seqs = [], {}
    for t in range(weeks):
        for k in range(cases_per_week):
            cid = f"c{t}_{k}"
            cases.append(Case(cid, t, k % n))
            s = base.copy()
            hit = rng.random(seq_len) < 0.1
            s[hit] = (s[hit] + 1) % 4
            seqs[cid] = AlignedSequence(cid, "".join("AGCT"[i] for i in s))
    infected = np.zeros((weeks, n))
    for c in cases:
        infected[c.week, c.location] += 1
    return Dataset([f"L{i}" for i in range(n)], list(range(weeks)), infected, rng.uniform(10, 100, (weeks, n)),
                   cases, distances=haversine_matrix(TOY_COORDS), coords=TOY_COORDS, sequences=seqs)


TOY_WINDOW_CONFIG = RunConfig(T=2, H=2, dropout=0.0, d=4, d_gen=2, k=3, M_max=6)


def jitter_biases(params, seed: int = 9, scale: float = 0.05, link_scale: float = 1.0) -> None:
    """Move zero-initialized biases off the ReLU kink so finite differences are well defined.

    The zero-initialized link weights get ``link_scale`` noise, standing in for a trained
    predictor; untrained, every candidate edge has the same weight and the spectrum is degenerate.
    """
    r = np.random.default_rng(seed)
    for name, v in params.named():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b"):
            v.data = np.asarray(v.data + r.normal(0.0, scale, v.shape))
        elif leaf == "W_link":
            v.data = np.asarray(v.data + r.normal(0.0, link_scale, v.shape))


def randn(rng, *shape) -> ag.Value:
    return ag.param(rng.normal(size=shape))


def permute_snapshot(snap: HeteroSnapshot, perm: np.ndarray) -> HeteroSnapshot:
    """Relabel locations so new location ``a`` is old location ``perm[a]``; cases keep their order."""
    inv = np.argsort(perm)
    pairs = inv[snap.spatial.pairs]
    lo, hi = pairs.min(axis=1), pairs.max(axis=1)
    spatial = Edges(np.stack([lo, hi], axis=1).astype(np.int64), snap.spatial.weight.copy())
    inputs = None if snap.location_inputs is None else snap.location_inputs[perm]
    return HeteroSnapshot(
        week=snap.week,
        location_ids=[snap.location_ids[i] for i in perm],
        location_features=snap.location_features[perm],
        case_ids=list(snap.case_ids),
        case_location=inv[snap.case_location].astype(np.int64),
        case_features=snap.case_features.copy(),
        spatial=spatial,
        genetic=snap.genetic,
        location_inputs=inputs,
    )


def random_adjacency(rng, n, density=0.6):
    a = np.triu(rng.uniform(0, 1, (n, n)) * (rng.random((n, n)) < density), 1)
    return a + a.T


def bound_instance(rng):
    """Case-augmented graph and its degree-normalized location aggregate.

    Returns ``(A_hetero, A_fusion, P)`` where ``P`` maps every node to its home location.
    """
    n = int(rng.integers(3, 7))
    m = int(rng.integers(0, 6))
    loc = rng.integers(0, n, m)
    P = np.zeros((n + m, n))
    P[np.arange(n), np.arange(n)] = 1
    P[n + np.arange(m), loc] = 1
    A = np.zeros((n + m, n + m))
    A[:n, :n] = random_adjacency(rng, n, density=1.0)
    A[n + np.arange(m), loc] = A[loc, n + np.arange(m)] = 1
    g = np.triu(rng.uniform(0, 1, (m, m)) * (rng.random((m, m)) < 0.5), 1)
    A[n:, n:] = g + g.T
    size = np.diag(P.T @ P)
    Af = (P.T @ A @ P) / np.sqrt(np.outer(size, size))
    np.fill_diagonal(Af, 0)
    return A, Af, P
