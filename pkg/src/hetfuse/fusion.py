"""Fusion graph: aggregated location nodes, LSH-proposed edges, gated edge embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Value
from .graph import HeteroSnapshot
from .smoothing import row_normalized


@dataclass
class MLP:
    """Two-layer perceptron ``relu(z W1 + b1) W2 + b2``."""

    W1: Value
    b1: Value
    W2: Value
    b2: Value

    def __call__(self, z: Value) -> Value:
        return ag.relu(z @ self.W1 + self.b1) @ self.W2 + self.b2


@dataclass
class FusionParams:
    f1: MLP
    f2: MLP
    fm: MLP
    W_link: Value  # (2d, 1)
    b_link: Value  # (1, 1)
    e_spatial: Value  # (1, d)
    e_genetic: Value  # (1, d)
    W_edge: Value  # (d, d)
    b_edge: Value  # (1, d)
    W_query: Value  # (2d, d)
    W_key: Value  # (d, d)
    hyperplanes: np.ndarray  # (B, d), unit rows, fixed per run
    heads: int = 2

    @property
    def dim(self) -> int:
        return self.W_edge.shape[0]


@dataclass
class FusionGraph:
    week: int
    X: Value  # (N, d) fusion node embeddings
    candidates: np.ndarray  # (C, 2) sampled pairs
    candidate_p: Value  # (C, 1)
    pairs: np.ndarray  # (E, 2) kept edges, i < j
    p: Value  # (E, 1) link probabilities of kept edges
    edge_embedding: Value  # (E, d)
    alpha: Value | None  # (E, R) relation weights

    @property
    def n_nodes(self) -> int:
        return self.X.shape[0]

    def adjacency(self) -> Value:
        return pair_adjacency(self.p, self.pairs, self.n_nodes)

    def adjacency_array(self) -> np.ndarray:
        return self.adjacency().data

    def edge_context(self) -> Value:
        """Degree-normalized sum of incident fused edge embeddings, (N, d)."""
        s = incidence(self.p, self.pairs, self.n_nodes)
        return ag.row_normalize(s) @ self.edge_embedding


def pair_adjacency(p: Value, pairs: np.ndarray, n: int) -> Value:
    """Symmetric (n, n) matrix with ``p_k`` at both orientations of pair ``k``."""
    i, j = pairs[:, 0], pairs[:, 1]
    a = np.zeros((n, n))
    w = p.data[:, 0]
    a[i, j] = w
    a[j, i] = w

    def backward(g):
        p._accum((g[i, j] + g[j, i]).reshape(-1, 1))

    return Value.from_op(a, (p,), backward, "pair_adjacency")


def incidence(p: Value, pairs: np.ndarray, n: int) -> Value:
    """(n, E) matrix with ``p_k`` at both endpoints of edge ``k``."""
    i, j = pairs[:, 0], pairs[:, 1]
    e = np.arange(len(pairs))
    s = np.zeros((n, len(pairs)))
    w = p.data[:, 0]
    s[i, e] = w
    s[j, e] = w

    def backward(g):
        p._accum((g[i, e] + g[j, e]).reshape(-1, 1))

    return Value.from_op(s, (p,), backward, "incidence")


def random_hyperplanes(B: int, d: int, rng: np.random.Generator) -> np.ndarray:
    r = rng.standard_normal((B, d))
    return r / np.linalg.norm(r, axis=1, keepdims=True)


def fusion_operators(snap: HeteroSnapshot, use_genetic: bool = True):
    """Spatial-mean, case-mean and genetic-neighbour-mean operators for fusion nodes."""
    n, m = snap.n_locations, snap.n_cases
    if len(snap.spatial):
        i, j = snap.spatial.pairs.T
        spatial_op = row_normalized(np.concatenate([i, j]), np.concatenate([j, i]),
                                    np.concatenate([snap.spatial.weight] * 2), n)
    else:
        spatial_op = sp.csr_matrix((n, n))
    counts = np.bincount(snap.case_location, minlength=n).astype(np.float64) if m else np.zeros(n)
    inv = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
    case_mean_op = sp.csr_matrix((inv[snap.case_location], (snap.case_location, np.arange(m))), shape=(n, m))
    case_gen_op = None
    if use_genetic and len(snap.genetic):
        k, l = snap.genetic.pairs.T
        gen_op = row_normalized(np.concatenate([k, l]), np.concatenate([l, k]),
                                np.concatenate([snap.genetic.weight] * 2), m)
        case_gen_op = (case_mean_op @ gen_op).tocsr()
    return spatial_op, case_mean_op, case_gen_op


def fusion_nodes(snap: HeteroSnapshot, smoothed: Value, params: FusionParams, use_genetic: bool = True) -> Value:
    n, m = snap.n_locations, snap.n_cases
    loc = ag.take_rows(smoothed, np.arange(n))
    cases = ag.take_rows(smoothed, np.arange(n, n + m))
    spatial_op, case_mean_op, case_gen_op = snap.cached(("fusion_ops", use_genetic),
                                                        lambda: fusion_operators(snap, use_genetic))
    x_spatial = ag.spmm(spatial_op, loc)
    x_cases = ag.spmm(case_mean_op, cases)
    if case_gen_op is not None:
        x_genetic = ag.spmm(case_gen_op, cases)
    else:
        x_genetic = ag.const(np.zeros((n, params.dim)))

    spatial_part = params.f1(ag.concat_cols([loc, x_spatial]))
    case_part = params.f2(ag.concat_cols([x_cases, x_genetic]))
    return params.fm(ag.concat_cols([spatial_part, case_part]))


def lsh_codes(X: np.ndarray, hyperplanes: np.ndarray) -> np.ndarray:
    """Bit ``h`` of node ``i`` is 1 iff ``r_h . x_i >= 0``."""
    return (np.asarray(X) @ np.asarray(hyperplanes).T) >= 0.0


def codes_to_int(codes: np.ndarray) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    B = codes.shape[1]
    if B > 62:
        raise ValueError("codes longer than 62 bits are not supported")
    return codes @ (1 << np.arange(B - 1, -1, -1, dtype=np.int64))


def sample_candidates(codes: np.ndarray, M_max: int, tau_h: int = 1) -> np.ndarray:
    """Sorting-based LSH candidate pairs, at most ``M_max``.

    Buckets are visited in ascending integer code; within a bucket pairs come
    out in lexicographic node order. If the exact-match pairs leave room, each
    bucket is paired with its single-bit-flip neighbour buckets (higher code
    only, so each bucket pair is seen once), flipping bits from the most
    significant down.
    """
    if tau_h not in (0, 1):
        raise ValueError("only Hamming radius 0 or 1 is supported")
    n = codes.shape[0]
    out: list[tuple[int, int]] = []
    if n < 2 or M_max <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    keys = codes_to_int(codes)
    order = np.lexsort((np.arange(n), keys))
    sorted_keys = keys[order]
    uniq, starts = np.unique(sorted_keys, return_index=True)
    ends = np.append(starts[1:], n)
    buckets = {int(k): order[s:e] for k, s, e in zip(uniq, starts, ends)}

    for key in uniq:
        members = buckets[int(key)]
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                out.append((int(members[a]), int(members[b])))
                if len(out) >= M_max:
                    return np.array(out, dtype=np.int64)

    if tau_h == 1:
        B = codes.shape[1]
        for key in uniq:
            key = int(key)
            members = buckets[key]
            for bit in range(B - 1, -1, -1):
                other = key ^ (1 << bit)
                if other <= key or other not in buckets:
                    continue
                for u in members:
                    for v in buckets[other]:
                        out.append((int(min(u, v)), int(max(u, v))))
                        if len(out) >= M_max:
                            return np.array(out, dtype=np.int64)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def pair_features(X: Value, pairs: np.ndarray) -> Value:
    """``([x_i || x_j] + [x_j || x_i]) / 2`` per pair, so scores ignore the pair's orientation."""
    xi = ag.take_rows(X, pairs[:, 0])
    xj = ag.take_rows(X, pairs[:, 1])
    return ag.scale(ag.concat_cols([xi, xj]) + ag.concat_cols([xj, xi]), 0.5)


def link_probabilities(X: Value, pairs: np.ndarray, W_link: Value, b_link: Value) -> Value:
    """``sigmoid(z_ij W_l + b_l)`` per pair with ``z_ij`` from :func:`pair_features`, shape (P, 1)."""
    return ag.sigmoid(pair_features(X, pairs) @ W_link + b_link)


def relation_features(snap: HeteroSnapshot, pairs: np.ndarray) -> dict[str, np.ndarray]:
    """Scalar per-pair features: spatial kernel weight and mean genetic weight between case sets."""
    n = snap.n_locations
    spatial = np.zeros((n, n))
    if len(snap.spatial):
        i, j = snap.spatial.pairs.T
        spatial[i, j] = spatial[j, i] = snap.spatial.weight
    gsum = np.zeros((n, n))
    gcount = np.zeros((n, n))
    if len(snap.genetic):
        li = snap.case_location[snap.genetic.pairs[:, 0]]
        lj = snap.case_location[snap.genetic.pairs[:, 1]]
        np.add.at(gsum, (li, lj), snap.genetic.weight)
        np.add.at(gcount, (li, lj), 1.0)
        gsum = gsum + gsum.T - np.diag(np.diag(gsum))
        gcount = gcount + gcount.T - np.diag(np.diag(gcount))
    gmean = np.divide(gsum, gcount, out=np.zeros_like(gsum), where=gcount > 0)
    i, j = pairs[:, 0], pairs[:, 1]
    return {"spatial": spatial[i, j].reshape(-1, 1), "genetic": gmean[i, j].reshape(-1, 1)}


def head_sum_matrix(d: int, heads: int) -> np.ndarray:
    dk = d // heads
    s = np.zeros((d, heads))
    for h in range(heads):
        s[h * dk:(h + 1) * dk, h] = 1.0
    return s


def attention_scores(query: Value, key: Value, heads: int) -> Value:
    """Scaled dot-product per head, averaged over heads: (P, d) x (P, d) -> (P, 1)."""
    d = query.shape[1]
    dk = d // heads
    per_head = ag.mul(query, key) @ head_sum_matrix(d, heads)
    return ag.scale(per_head @ np.full((heads, 1), 1.0 / heads), 1.0 / math.sqrt(dk))


def fuse_edge_embeddings(X: Value, pairs: np.ndarray, snap: HeteroSnapshot, params: FusionParams,
                         relations=("spatial", "genetic")) -> tuple[Value, Value | None]:
    """Gate relation embeddings ``e_r + W_edge x^(r) + b_edge`` by attention weights."""
    d = params.dim
    if len(pairs) == 0:
        return ag.const(np.zeros((0, d))), None
    feats = relation_features(snap, pairs)
    n_pairs = len(pairs)
    query = pair_features(X, pairs) @ params.W_query
    ones = np.ones((n_pairs, 1))
    embeddings = []
    scores = []
    for rel in relations:
        e_r = getattr(params, f"e_{rel}")
        broadcast = feats[rel] @ np.ones((1, d))
        emb = ag.matmul(ones, e_r) + ag.matmul(broadcast, params.W_edge) + params.b_edge
        embeddings.append(emb)
        scores.append(attention_scores(query, emb @ params.W_key, params.heads))
    alpha = ag.softmax_rows(ag.concat_cols(scores))
    fused = None
    for r, emb in enumerate(embeddings):
        term = ag.mul(ag.col_broadcast(ag.take_cols(alpha, r, r + 1), d), emb)
        fused = term if fused is None else fused + term
    return fused, alpha


def build_fusion_graph(snap: HeteroSnapshot, smoothed: Value, params: FusionParams, *,
                       M_max: int, tau_h: int = 1, p_keep: float = 0.5,
                       use_genetic: bool = True) -> FusionGraph:
    X = fusion_nodes(snap, smoothed, params, use_genetic=use_genetic)
    codes = lsh_codes(X.data, params.hyperplanes)
    candidates = sample_candidates(codes, M_max, tau_h)
    if len(candidates):
        p_all = link_probabilities(X, candidates, params.W_link, params.b_link)
        keep = np.flatnonzero(p_all.data[:, 0] >= p_keep)
    else:
        p_all = ag.const(np.zeros((0, 1)))
        keep = np.zeros(0, dtype=np.int64)
    pairs = candidates[keep]
    p = ag.take_rows(p_all, keep)
    relations = ("spatial", "genetic") if use_genetic else ("spatial",)
    edge_emb, alpha = fuse_edge_embeddings(X, pairs, snap, params, relations)
    return FusionGraph(snap.week, X, candidates, p_all, pairs, p, edge_emb, alpha)
