"""Trainable parameters and the full forward pass over one observation window."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from . import autograd as ag
from .autograd import Value
from .config import RunConfig
from .forecaster import ForecasterParams, GraphInputs, SageLayer, decode, encode
from .fusion import MLP, FusionGraph, FusionParams, build_fusion_graph, random_hyperplanes
from .graph import HeteroSnapshot
from .smoothing import RELATIONS, SmoothingParams, smooth
from .spectral import hetero_top_k, spec_loss


@dataclass
class InputProjection:
    W_location: Value  # (2, d)
    b_location: Value
    W_case: Value  # (g, d)
    b_case: Value


@dataclass
class ModelParams:
    proj: InputProjection
    smooth: SmoothingParams
    fusion: FusionParams
    forecaster: ForecasterParams

    def named(self) -> list[tuple[str, Value]]:
        out: list[tuple[str, Value]] = []

        def walk(prefix, obj):
            if isinstance(obj, Value):
                out.append((prefix, obj))
            elif isinstance(obj, list):
                for i, item in enumerate(obj):
                    walk(f"{prefix}.{i}", item)
            elif is_dataclass(obj):
                for f in fields(obj):
                    walk(f"{prefix}.{f.name}" if prefix else f.name, getattr(obj, f.name))

        walk("", self)
        return out

    def values(self) -> list[Value]:
        return [v for _, v in self.named()]

    def weights(self) -> list[Value]:
        """Weight matrices subject to L2; biases and embedding vectors are excluded."""
        return [v for name, v in self.named() if name.rsplit(".", 1)[-1].startswith("W")]

    def groups(self) -> dict[str, list[Value]]:
        out: dict[str, list[Value]] = {}
        for name, v in self.named():
            out.setdefault(name.split(".", 1)[0], []).append(v)
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        out = {name: v.data.copy() for name, v in self.named()}
        out["fusion.hyperplanes"] = self.fusion.hyperplanes.copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, v in self.named():
            if arrays[name].shape != v.shape:
                raise ValueError(f"parameter {name}: shape {arrays[name].shape} != {v.shape}")
            new = np.array(arrays[name], dtype=np.float64)
            new.setflags(write=False)
            v.data = new
        self.fusion.hyperplanes = np.array(arrays["fusion.hyperplanes"], dtype=np.float64)

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    @property
    def case_dim(self) -> int:
        return self.proj.W_case.shape[0]


# A fresh link predictor scores every candidate sigmoid(1) ~ 0.73 > p_keep. W_link
# starts at zero: random weights on large fusion embeddings can push every
# logit below the threshold, leaving empty graphs that get no gradient.
LINK_BIAS_INIT = 1.0


def _glorot(rng, shape, gain=1.0):
    limit = gain * math.sqrt(6.0 / (shape[0] + shape[1]))
    return ag.param(rng.uniform(-limit, limit, size=shape))


def _zeros(shape):
    return ag.param(np.zeros(shape))


def init_params(config: RunConfig, case_dim: int, seed: int | None = None) -> ModelParams:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    d = config.d
    g = config.init_scale

    def mlp(n_in):
        return MLP(_glorot(rng, (n_in, d), g), _zeros((1, d)), _glorot(rng, (d, d), g), _zeros((1, d)))

    proj = InputProjection(_glorot(rng, (2, d), g), _zeros((1, d)), _glorot(rng, (case_dim, d), g), _zeros((1, d)))
    sm = SmoothingParams(*(_glorot(rng, (d, d), g) for _ in RELATIONS), _zeros((1, d)), _zeros((1, d)), K=config.K)
    fusion = FusionParams(
        f1=mlp(2 * d), f2=mlp(2 * d), fm=mlp(2 * d),
        W_link=_zeros((2 * d, 1)), b_link=ag.param(np.full((1, 1), LINK_BIAS_INIT)),
        e_spatial=ag.param(rng.normal(0.0, 0.1, (1, d))), e_genetic=ag.param(rng.normal(0.0, 0.1, (1, d))),
        W_edge=_glorot(rng, (d, d), g), b_edge=_zeros((1, d)),
        W_query=_glorot(rng, (2 * d, d), g), W_key=_glorot(rng, (d, d), g),
        hyperplanes=random_hyperplanes(config.B, d, rng), heads=config.heads,
    )
    fc = ForecasterParams(
        encoder=[SageLayer(_glorot(rng, (d, d), g), _glorot(rng, (d, d), g)) for _ in range(config.L)],
        decoder=[SageLayer(_glorot(rng, (d, d), g), _glorot(rng, (d, d), g)) for _ in range(config.n_decoder_layers)],
        pos=ag.param(rng.normal(0.0, 0.1, (config.T, d))),
        W_tquery=_glorot(rng, (d, d), g), W_tkey=_glorot(rng, (d, d), g),
        W_prev=_glorot(rng, (d, d), g),
        step=ag.param(rng.normal(0.0, 0.1, (config.H, d))),
        W_out=_glorot(rng, (d, 1), g), heads=config.heads,
    )
    return ModelParams(proj, sm, fusion, fc)


def snapshot_embeddings(snap: HeteroSnapshot, params: ModelParams) -> Value:
    """Project raw location/case features to ``d`` and stack locations before cases."""
    loc = ag.const(snap.model_inputs()) @ params.proj.W_location + params.proj.b_location
    if snap.n_cases == 0:
        return loc
    if snap.case_features.shape[1] != params.case_dim:
        raise ag.ShapeError(f"case features have width {snap.case_features.shape[1]}, model expects {params.case_dim}")
    cases = ag.const(snap.case_features) @ params.proj.W_case + params.proj.b_case
    return ag.concat_rows([loc, cases])


def fusion_graph_for(snap: HeteroSnapshot, params: ModelParams, config: RunConfig) -> FusionGraph:
    x0 = snapshot_embeddings(snap, params)
    relations = RELATIONS if config.use_genetic else ("spatial", "assignment")
    if config.use_smoothing and params.smooth.K > 0:
        x = smooth(snap, x0, params.smooth, weighted=config.weighted_messages, relations=relations)
    else:
        x = x0
    return build_fusion_graph(snap, x, params.fusion, M_max=config.M_max, tau_h=config.tau_h,
                              p_keep=config.p_keep, use_genetic=config.use_genetic)


def spectral_k(config: RunConfig, snap: HeteroSnapshot) -> int:
    return min(config.k, snap.n_locations, snap.n_locations + snap.n_cases)


@dataclass
class WindowOutput:
    yhat: Value  # (H, N)
    spec: Value  # (1, 1) mean spectral alignment over the window's weeks
    fusion_graphs: list[FusionGraph]


def forecast(window: list[HeteroSnapshot], params: ModelParams, config: RunConfig, *,
             rng: np.random.Generator | None = None, hetero_cache: dict | None = None,
             with_spec: bool = True) -> WindowOutput:
    """Smoothing -> fusion -> encode -> H decoder steps; outputs stay in normalized space.

    Pass ``rng`` to enable dropout (training); ``None`` means evaluation mode.
    """
    if len(window) != config.T:
        raise ag.ShapeError(f"window has {len(window)} snapshots, expected T={config.T}")
    drop = config.dropout if rng is not None else 0.0
    graphs = [fusion_graph_for(s, params, config) for s in window]
    inputs = [GraphInputs.from_fusion(fg) for fg in graphs]
    enc = encode(inputs, params.forecaster, dropout=drop, rng=rng)
    ys = decode(enc, inputs[-1], params.forecaster, config.H, lambda_o=config.lambda_o,
                lambda_p=config.lambda_p, hidden_mix=config.hidden_mix, dropout=drop, rng=rng)
    yhat = ag.transpose(ag.concat_cols(ys))

    spec = ag.const(np.zeros((1, 1)))
    if with_spec:
        terms = []
        for snap, fg in zip(window, graphs):
            k = spectral_k(config, snap)
            key = (snap.week, k)
            if hetero_cache is not None and key in hetero_cache:
                target = hetero_cache[key]
            else:
                target = hetero_top_k(snap, k)
                if hetero_cache is not None:
                    hetero_cache[key] = target
            terms.append(spec_loss(target, fg.adjacency(), k))
        spec = ag.scale(ag.total(ag.concat_rows(terms)), 1.0 / len(terms))
    return WindowOutput(yhat, spec, graphs)
