"""GraphSAGE encoder over fusion graphs, temporal attention pooling, autoregressive decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Value
from .fusion import FusionGraph, attention_scores


@dataclass
class SageLayer:
    W_self: Value  # (d, d)
    W_neigh: Value  # (d, d)


@dataclass
class ForecasterParams:
    encoder: list[SageLayer]
    decoder: list[SageLayer]
    pos: Value  # (T, d) learnable positional encodings, row t for window offset t
    W_tquery: Value  # (d, d)
    W_tkey: Value  # (d, d)
    W_prev: Value  # (d, d) projection of the previous decoded output
    step: Value  # (H, d) learnable horizon-step encodings
    W_out: Value  # (d, 1)
    heads: int = 2


@dataclass
class EncoderState:
    steps: list[Value]  # H_t^(L) for each window offset, each (N, d)
    context: Value  # (N, d)
    attention: Value  # (N, T), rows on the simplex


@dataclass
class DecoderState:
    hidden: Value  # Z_{h-1}
    prev_output: Value  # f_{h-1}
    outputs: list[Value] = field(default_factory=list)


def sage_layer(H: Value, A_f: Value, W_self: Value, W_neigh: Value, edge_context: Value | None = None,
               normalized: bool = False) -> Value:
    """``relu(H W_s + (D^-1 A_f H [+ edge_context]) W_n)``; isolated nodes get a zero neighbour term."""
    n = H.shape[0]
    if A_f.shape != (n, n):
        raise ShapeError(f"adjacency {A_f.shape} does not match {n} nodes")
    if W_self.shape[0] != H.shape[1] or W_neigh.shape[0] != H.shape[1]:
        raise ShapeError(f"weights {W_self.shape}/{W_neigh.shape} do not match features {H.shape}")
    walk = A_f if normalized else ag.row_normalize(A_f)
    neigh = walk @ H
    if edge_context is not None:
        neigh = neigh + edge_context
    return ag.relu(H @ W_self + neigh @ W_neigh)


@dataclass
class GraphInputs:
    """Per-week tensors the forecaster needs from a fusion graph."""

    X: Value
    walk: Value  # D^-1 A_f
    edge_context: Value

    @classmethod
    def from_fusion(cls, fg: FusionGraph, use_edge_context: bool = True) -> "GraphInputs":
        ctx = fg.edge_context() if use_edge_context else ag.const(np.zeros(fg.X.shape))
        return cls(fg.X, ag.row_normalize(fg.adjacency()), ctx)


def _sage_stack(H: Value, graph: GraphInputs, layers: list[SageLayer], dropout: float, rng) -> Value:
    for layer in layers:
        H = sage_layer(H, graph.walk, layer.W_self, layer.W_neigh, graph.edge_context, normalized=True)
        H = ag.dropout(H, dropout, rng)
    return H


def encode(graphs: list[GraphInputs], params: ForecasterParams, dropout: float = 0.0,
           rng: np.random.Generator | None = None) -> EncoderState:
    T = params.pos.shape[0]
    if len(graphs) != T:
        raise ShapeError(f"window has {len(graphs)} steps, expected {T}")
    steps = []
    for t, g in enumerate(graphs):
        H = g.X + ag.take_rows(params.pos, [t])
        steps.append(_sage_stack(H, g, params.encoder, dropout, rng))
    d = steps[0].shape[1]
    # the last observed step queries every step of the same node
    query = steps[-1] @ params.W_tquery
    scores = ag.concat_cols([attention_scores(query, s @ params.W_tkey, params.heads) for s in steps])
    attn = ag.softmax_rows(scores)
    context = None
    for t, s in enumerate(steps):
        term = ag.mul(ag.col_broadcast(ag.take_cols(attn, t, t + 1), d), s)
        context = term if context is None else context + term
    return EncoderState(steps, context, attn)


def decode_step(state: DecoderState, graph: GraphInputs, context: Value, params: ForecasterParams, h: int, *,
                lambda_o: float, lambda_p: float, hidden_mix: float = 0.5, dropout: float = 0.0,
                rng: np.random.Generator | None = None) -> tuple[Value, DecoderState]:
    """One autoregressive step; returns ``(y_hat_h (N, 1), next state)``."""
    if lambda_o < 0 or lambda_p < 0 or lambda_o + lambda_p > 1.0 + 1e-12:
        raise ValueError(f"invalid blend weights lambda_o={lambda_o}, lambda_p={lambda_p}")
    x = state.hidden + state.prev_output @ params.W_prev + ag.take_rows(params.step, [h])
    d_h = _sage_stack(x, graph, params.decoder, dropout, rng)
    blended = ag.scale(d_h, 1.0 - lambda_o - lambda_p) + ag.scale(state.prev_output, lambda_o) \
        + ag.scale(context, lambda_p)
    y = blended @ params.W_out
    hidden = ag.scale(blended, hidden_mix) + ag.scale(state.hidden, 1.0 - hidden_mix)
    return y, DecoderState(hidden, blended, state.outputs + [blended])


def decode(enc: EncoderState, graph: GraphInputs, params: ForecasterParams, horizon: int, *,
           lambda_o: float, lambda_p: float, hidden_mix: float = 0.5, dropout: float = 0.0,
           rng: np.random.Generator | None = None, prev_override: dict[int, Value] | None = None) -> list[Value]:
    """Run ``horizon`` decoder steps on the final observed fusion graph.

    ``prev_override`` replaces ``f_{h-1}`` fed into step ``h`` (perturbation tests).
    """
    context = enc.context
    state = DecoderState(hidden=context, prev_output=ag.const(np.zeros(context.shape)))
    ys = []
    for h in range(horizon):
        if prev_override and h in prev_override:
            state = DecoderState(state.hidden, prev_override[h], state.outputs)
        y, state = decode_step(state, graph, context, params, h, lambda_o=lambda_o, lambda_p=lambda_p,
                               hidden_mix=hidden_mix, dropout=dropout, rng=rng)
        ys.append(y)
    return ys
