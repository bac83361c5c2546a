"""Cross-layer smoothing: K rounds of relation-specific neighbour means plus a node-type bias.

Node order everywhere is locations ``0..N-1`` followed by cases ``N..N+M-1``.
Weights act on row vectors (``x @ W``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import ShapeError, Value
from .graph import HeteroSnapshot

RELATIONS = ("spatial", "genetic", "assignment")


@dataclass
class SmoothingParams:
    W_spatial: Value
    W_genetic: Value
    W_assignment: Value
    b_location: Value  # (1, d)
    b_case: Value  # (1, d)
    K: int = 3

    @property
    def dim(self) -> int:
        return self.W_spatial.shape[0]

    def weight_for(self, relation: str) -> Value:
        return getattr(self, f"W_{relation}")


def row_normalized(rows, cols, weight, size: int) -> sp.csr_matrix:
    a = sp.csr_matrix((weight, (rows, cols)), shape=(size, size))
    s = np.asarray(a.sum(axis=1)).ravel()
    inv = np.divide(1.0, s, out=np.zeros_like(s), where=s != 0)
    return sp.diags(inv) @ a


def relation_operators(snap: HeteroSnapshot, weighted: bool = True,
                       relations=RELATIONS) -> dict[str, sp.csr_matrix]:
    """Row-normalized neighbour-mean operators, one per relation, over all N+M nodes.

    Rows without neighbours are zero, so an empty neighbourhood sends a zero message.
    """
    n, m = snap.n_locations, snap.n_cases
    size = n + m
    ops = {}
    for rel in relations:
        if rel == "spatial":
            pairs, w = snap.spatial.pairs, snap.spatial.weight
        elif rel == "genetic":
            pairs, w = snap.genetic.pairs + n, snap.genetic.weight
        elif rel == "assignment":
            pairs = np.stack([n + np.arange(m), snap.case_location], axis=1).reshape(-1, 2)
            w = np.ones(m)
        else:
            raise ValueError(f"unknown relation {rel!r}")
        if not weighted:
            w = np.ones(len(w))
        i, j = pairs[:, 0], pairs[:, 1]
        ops[rel] = row_normalized(np.concatenate([i, j]), np.concatenate([j, i]), np.concatenate([w, w]), size)
    return ops


def type_bias(snap: HeteroSnapshot, params: SmoothingParams) -> Value:
    n, m = snap.n_locations, snap.n_cases
    indicator = np.zeros((n + m, 2))
    indicator[:n, 0] = 1.0
    indicator[n:, 1] = 1.0
    return ag.matmul(indicator, ag.concat_rows([params.b_location, params.b_case]))


def smooth(snap: HeteroSnapshot, x0: Value, params: SmoothingParams, weighted: bool = True,
           relations=RELATIONS) -> Value:
    """Return ``x^(K)`` for every node of the snapshot."""
    size = snap.n_locations + snap.n_cases
    if x0.shape != (size, params.dim):
        raise ShapeError(f"smoothing input must be {(size, params.dim)}, got {x0.shape}")
    ops = snap.cached(("relation_ops", weighted, tuple(relations)),
                      lambda: relation_operators(snap, weighted, relations))
    bias = type_bias(snap, params)
    x = x0
    for _ in range(params.K):
        total = bias
        for rel in relations:
            total = total + ag.spmm(ops[rel], x @ params.weight_for(rel))
        x = ag.relu(total)
    return x
