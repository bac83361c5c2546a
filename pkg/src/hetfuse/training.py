"""Composite objective, normalization schemes, metrics, SGD training and blocked cross-validation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Value
from .config import RunConfig
from .data import Dataset
from .graph import HeteroSnapshot, build_snapshots
from .model import ModelParams, forecast, init_params


class NumericalError(FloatingPointError):
    pass


# --------------------------------------------------------------------------- loss


@dataclass
class LossBreakdown:
    pred: float
    spec: float
    reg: float
    lambda1: float
    lambda2: float

    @property
    def total(self) -> float:
        return self.pred + self.lambda1 * self.spec + self.lambda2 * self.reg

    def as_dict(self) -> dict:
        return {"pred": self.pred, "spec": self.spec, "reg": self.reg, "total": self.total}


def l2_penalty(weights: Sequence[Value]) -> Value:
    terms = [ag.sum_squares(w) for w in weights]
    if not terms:
        return ag.const(np.zeros((1, 1)))
    return ag.total(ag.concat_rows(terms))


def loss(yhat: Value, y, spec_terms: Value | Sequence[Value] | None, params: ModelParams | Sequence[Value] | None,
         lambda1: float, lambda2: float) -> tuple[Value, LossBreakdown]:
    """Return the differentiable total and its breakdown.

    ``spec_terms`` are per-step spectral losses (averaged); ``params`` supplies
    the weight matrices for the L2 term.
    """
    y = ag.const(y)
    if yhat.shape != y.shape:
        raise ag.ShapeError(f"prediction {yhat.shape} and target {y.shape} differ")
    pred = ag.mean(ag.mul(yhat - y, yhat - y))
    if spec_terms is None:
        spec = ag.const(np.zeros((1, 1)))
    elif isinstance(spec_terms, Value):
        spec = spec_terms
    else:
        spec_terms = list(spec_terms)
        spec = ag.scale(ag.total(ag.concat_rows(spec_terms)), 1.0 / len(spec_terms)) if spec_terms \
            else ag.const(np.zeros((1, 1)))
    if params is None:
        weights = []
    elif isinstance(params, ModelParams):
        weights = params.weights()
    else:
        weights = list(params)
    reg = l2_penalty(weights)
    total = pred + ag.scale(spec, lambda1) + ag.scale(reg, lambda2)
    return total, LossBreakdown(pred.item(), spec.item(), reg.item(), lambda1, lambda2)


# ------------------------------------------------------------------ normalization


@dataclass
class NormRecord:
    scheme: str
    params: dict = field(default_factory=dict)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.scheme == "log1p":
            return np.log(_log_arg(x, 1.0))
        if self.scheme == "minmax":
            return (x - p["min"]) / (p["max"] - p["min"])
        if self.scheme == "zscore":
            return (x - p["mean"]) / p["std"]
        if self.scheme == "log_minmax":
            z = np.log(_log_arg(x, p["delta"]))
            return (z - p["min"]) / (p["max"] - p["min"])
        raise ValueError(f"unknown scheme {self.scheme!r}")

    def inverse(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        p = self.params
        if self.scheme == "log1p":
            return np.expm1(z)
        if self.scheme == "minmax":
            return z * (p["max"] - p["min"]) + p["min"]
        if self.scheme == "zscore":
            return z * p["std"] + p["mean"]
        if self.scheme == "log_minmax":
            return np.exp(z * (p["max"] - p["min"]) + p["min"]) - p["delta"]
        raise ValueError(f"unknown scheme {self.scheme!r}")


def _log_arg(x: np.ndarray, delta: float) -> np.ndarray:
    arg = x + delta
    if np.any(arg <= 0):
        raise ValueError("logarithm of a non-positive value")
    return arg


def fit_normalizer(x, scheme: str, delta: float = 1.0) -> NormRecord:
    x = np.asarray(x, dtype=np.float64)
    if scheme == "log1p":
        _log_arg(x, 1.0)
        return NormRecord(scheme)
    if scheme == "minmax":
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            raise ValueError("min-max normalization of a constant series")
        return NormRecord(scheme, {"min": lo, "max": hi})
    if scheme == "zscore":
        mu, sd = float(x.mean()), float(x.std())
        if sd == 0.0:
            raise ValueError("z-score normalization of a constant series (std = 0)")
        return NormRecord(scheme, {"mean": mu, "std": sd})
    if scheme == "log_minmax":
        z = np.log(_log_arg(x, delta))
        lo, hi = float(z.min()), float(z.max())
        if lo == hi:
            raise ValueError("min-max normalization of a constant series")
        return NormRecord(scheme, {"delta": delta, "min": lo, "max": hi})
    raise ValueError(f"unknown scheme {scheme!r}")


def normalize(x, scheme: str, delta: float = 1.0) -> tuple[np.ndarray, NormRecord]:
    rec = fit_normalizer(x, scheme, delta)
    return rec.apply(x), rec


def _robust_fit(x, scheme: str, delta: float) -> NormRecord:
    """Fit, falling back to an identity-like record for constant features."""
    try:
        return fit_normalizer(x, scheme, delta)
    except ValueError:
        if scheme in ("minmax", "log_minmax"):
            base = np.log(np.asarray(x) + delta) if scheme == "log_minmax" else np.asarray(x)
            lo = float(base.min())
            out = {"min": lo, "max": lo + 1.0}
            if scheme == "log_minmax":
                out["delta"] = delta
            return NormRecord(scheme, out)
        if scheme == "zscore":
            return NormRecord(scheme, {"mean": float(np.mean(x)), "std": 1.0})
        raise


# ------------------------------------------------------------------------ metrics


@dataclass
class MetricReport:
    rmse: float
    mae: float
    pcc: float
    f1: float
    per_step: dict = field(default_factory=dict)
    pcc_excluded: int = 0
    f1_excluded: int = 0

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "pcc": self.pcc, "f1": self.f1,
                "pcc_excluded_steps": self.pcc_excluded, "f1_excluded_steps": self.f1_excluded,
                "per_step": self.per_step}


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def f1_score(pred_pos: np.ndarray, true_pos: np.ndarray) -> float | None:
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    if tp + fp + fn == 0:
        return None
    return 2 * tp / (2 * tp + fp + fn)


def metrics(yhat, y, outbreak_threshold: float = 1.0) -> MetricReport:
    """Per-step RMSE/MAE/PCC/F1 on count-space arrays of shape (H, K), averaged over steps.

    Steps where PCC (zero variance) or F1 (no positives at all) is undefined
    are left out of that metric's average and counted.
    """
    yhat = np.atleast_2d(np.asarray(yhat, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch {yhat.shape} vs {y.shape}")
    rmse, mae, pcc, f1 = [], [], [], []
    for h in range(y.shape[0]):
        err = yhat[h] - y[h]
        rmse.append(math.sqrt(float(np.mean(err * err))))
        mae.append(float(np.mean(np.abs(err))))
        pcc.append(pearson(yhat[h], y[h]))
        f1.append(f1_score(yhat[h] >= outbreak_threshold, y[h] >= outbreak_threshold))
    pcc_ok = [v for v in pcc if v is not None]
    f1_ok = [v for v in f1 if v is not None]
    return MetricReport(
        rmse=float(np.mean(rmse)), mae=float(np.mean(mae)),
        pcc=float(np.mean(pcc_ok)) if pcc_ok else float("nan"),
        f1=float(np.mean(f1_ok)) if f1_ok else float("nan"),
        per_step={"rmse": rmse, "mae": mae, "pcc": pcc, "f1": f1},
        pcc_excluded=len(pcc) - len(pcc_ok), f1_excluded=len(f1) - len(f1_ok),
    )


# ------------------------------------------------------------------ data plumbing


@dataclass
class PreparedData:
    snapshots: list[HeteroSnapshot]
    targets: np.ndarray  # (W, N) normalized infected counts
    target_norm: NormRecord
    population_norm: NormRecord
    counts: np.ndarray  # (W, N) raw counts
    case_dim: int


def prepare(ds: Dataset, config: RunConfig, fit_weeks=None, snapshots: list[HeteroSnapshot] | None = None,
            norms: tuple[NormRecord, NormRecord] | None = None) -> PreparedData:
    """Build snapshots and normalize location features.

    Normalizers are fit on the rows selected by ``fit_weeks`` (all weeks by
    default) unless previously fitted ``norms`` (infected, population) are given.
    """
    snaps = build_snapshots(ds, config) if snapshots is None else snapshots
    if norms is None:
        fit = slice(None) if fit_weeks is None else fit_weeks
        norms = (_robust_fit(ds.infected[fit], config.normalization, config.log_delta),
                 _robust_fit(ds.population[fit], config.normalization, config.log_delta))
    inf_norm, pop_norm = norms
    targets = inf_norm.apply(ds.infected)
    pops = pop_norm.apply(ds.population)
    snaps = [s.with_inputs(np.stack([targets[t], pops[t]], axis=1)) for t, s in enumerate(snaps)]
    case_dim = 1 if ds.unit_case_features else config.d_gen
    return PreparedData(snaps, targets, inf_norm, pop_norm, ds.infected.copy(), case_dim)


def window_starts(n_weeks: int, T: int, H: int, lo: int = 0, hi: int | None = None) -> list[int]:
    """Stride-1 window starts whose inputs and targets lie inside weeks ``[lo, hi)``."""
    hi = n_weeks if hi is None else hi
    return list(range(lo, hi - T - H + 1))


# ----------------------------------------------------------------------- training


class SGD:
    def __init__(self, params: Sequence[Value], lr: float, momentum: float = 0.0, clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = [np.zeros(p.shape) for p in self.params]

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params if p.grad is not None))

    def step(self) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            v = self.momentum * self.velocity[i] + scale * p.grad
            self.velocity[i] = v
            new = p.data - self.lr * v
            new.setflags(write=False)
            p.data = new

    def zero_grad(self) -> None:
        ag.zero_grads(self.params)


def scheduled_lr(config: RunConfig, step: int, budget: int) -> float:
    if config.lr_schedule == "cosine" and budget > 0:
        return 0.5 * config.lr * (1.0 + math.cos(math.pi * step / budget))
    return config.lr


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]


def window_loss(prep: PreparedData, start: int, params: ModelParams, config: RunConfig,
                rng=None, cache=None) -> tuple[Value, LossBreakdown, Value]:
    window = prep.snapshots[start:start + config.T]
    target = prep.targets[start + config.T:start + config.T + config.H]
    out = forecast(window, params, config, rng=rng, hetero_cache=cache, with_spec=True)
    total, parts = loss(out.yhat, target, out.spec, params, config.effective_lambda1, config.lambda2)
    return total, parts, out.yhat


def evaluate_windows(prep: PreparedData, starts: Sequence[int], params: ModelParams, config: RunConfig,
                     cache=None) -> dict:
    """Mean loss parts (eval mode) and normalized-space RMSE over windows."""
    if not starts:
        return {"pred": float("nan"), "spec": float("nan"), "reg": float("nan"), "total": float("nan"), "rmse": float("nan")}
    parts = []
    sq = []
    for s in starts:
        _, p, yhat = window_loss(prep, s, params, config, rng=None, cache=cache)
        parts.append(p)
        target = prep.targets[s + config.T:s + config.T + config.H]
        sq.append(np.mean((yhat.data - target) ** 2))
    out = {key: float(np.mean([p.as_dict()[key] for p in parts])) for key in ("pred", "spec", "reg", "total")}
    out["rmse"] = math.sqrt(float(np.mean(sq)))
    return out


def train(prep: PreparedData, config: RunConfig, starts: Sequence[int] | None = None,
          params: ModelParams | None = None, log: Callable[[dict], None] | None = None) -> TrainResult:
    """Minibatch SGD over stride-1 windows; one history record per epoch.

    A step averages gradients over ``batch_size`` windows. ``max_steps`` (if
    set) stops training after that many optimizer steps.
    """
    if starts is None:
        starts = window_starts(len(prep.snapshots), config.T, config.H)
    starts = list(starts)
    if not starts:
        raise ValueError("no training windows: dataset shorter than T + H")
    params = init_params(config, prep.case_dim) if params is None else params
    rng = np.random.default_rng(config.seed + 1)
    opt = SGD(params.values(), config.lr, config.momentum, config.clip_norm)
    cache: dict = {}
    history = []
    step = 0
    n_batches = -(-len(starts) // config.batch_size)
    budget = config.epochs * n_batches if config.max_steps is None else min(config.max_steps, config.epochs * n_batches)
    for epoch in range(config.epochs):
        order = [starts[i] for i in rng.permutation(len(starts))]
        parts_seen = []
        for b in range(0, len(order), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            batch = order[b:b + config.batch_size]
            opt.zero_grad()
            for s in batch:
                total, parts, _ = window_loss(prep, s, params, config, rng=rng, cache=cache)
                if not math.isfinite(parts.total):
                    raise NumericalError(f"non-finite loss at epoch {epoch} step {step} (window {s})")
                ag.scale(total, 1.0 / len(batch)).backward()
                parts_seen.append(parts)
            opt.lr = scheduled_lr(config, step, budget)
            opt.step()
            step += 1
        if not parts_seen:
            break
        record = {"epoch": epoch, "steps": step}
        for key in ("pred", "spec", "reg", "total"):
            record[key] = float(np.mean([p.as_dict()[key] for p in parts_seen]))
        history.append(record)
        if log is not None:
            log(record)
    return TrainResult(params, history)


def predict_counts(prep: PreparedData, start: int, params: ModelParams, config: RunConfig) -> np.ndarray:
    """Denormalized (H, N) forecast for the window starting at ``start``."""
    out = forecast(prep.snapshots[start:start + config.T], params, config, with_spec=False)
    return prep.target_norm.inverse(out.yhat.data)


# --------------------------------------------------------------- cross-validation


@dataclass
class Fold:
    index: int
    test_weeks: tuple[int, int]  # [lo, hi) week indices
    train_starts: list[int]
    test_starts: list[int]


def make_folds(n_weeks: int, config: RunConfig) -> list[Fold]:
    """Contiguous week blocks; test windows live inside one block, training windows avoid it."""
    span = config.T + config.H
    bounds = np.linspace(0, n_weeks, config.folds + 1).round().astype(int)
    folds = []
    for f in range(config.folds):
        lo, hi = int(bounds[f]), int(bounds[f + 1])
        if hi - lo < span:
            raise ValueError(f"fold {f} has {hi - lo} weeks; each fold needs at least T+H={span}")
        test = window_starts(n_weeks, config.T, config.H, lo, hi)
        train_starts = [s for s in range(n_weeks - span + 1) if s + span <= lo or s >= hi]
        folds.append(Fold(f, (lo, hi), train_starts, test))
    return folds


FitPredict = Callable[[PreparedData, Fold, RunConfig], dict[int, np.ndarray]]


def model_fit_predict(prep: PreparedData, fold: Fold, config: RunConfig) -> dict[int, np.ndarray]:
    result = train(prep, config, fold.train_starts)
    return {s: predict_counts(prep, s, result.params, config) for s in fold.test_starts}


def fold_report(prep: PreparedData, fold: Fold, preds: dict[int, np.ndarray], config: RunConfig) -> MetricReport:
    H = config.H
    yhat = np.concatenate([preds[s] for s in fold.test_starts], axis=1)
    y = np.concatenate([prep.counts[s + config.T:s + config.T + H].reshape(H, -1) for s in fold.test_starts], axis=1)
    return metrics(yhat, y, config.outbreak_threshold)


@dataclass
class CVReport:
    folds: list[MetricReport]

    def summary(self) -> dict[str, tuple[float, float]]:
        out = {}
        for key in ("rmse", "mae", "pcc", "f1"):
            vals = np.array([getattr(r, key) for r in self.folds], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            out[key] = (float(vals.mean()), float(vals.std())) if vals.size else (float("nan"), float("nan"))
        return out


def _run_fold(args):
    ds, config, fold, fit_predict, snapshots = args
    lo, hi = fold.test_weeks
    fit = np.r_[0:lo, hi:ds.n_weeks]
    prep = prepare(ds, config, fit_weeks=fit, snapshots=snapshots)
    preds = fit_predict(prep, fold, config)
    return fold_report(prep, fold, preds, config)


def evaluate_cv(ds: Dataset, config: RunConfig, fit_predict: FitPredict | None = None,
                threads: int = 1, log: Callable[[dict], None] | None = None,
                snapshots: list[HeteroSnapshot] | None = None) -> CVReport:
    """Blocked k-fold evaluation; normalizers are fit on each fold's training weeks.

    Folds are independent and run in a process pool when ``threads > 1``.
    """
    folds = make_folds(ds.n_weeks, config)
    fit_predict = fit_predict or model_fit_predict
    snapshots = build_snapshots(ds, config) if snapshots is None else snapshots
    jobs = [(ds, config, f, fit_predict, snapshots) for f in folds]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(_run_fold, jobs))
    else:
        reports = [_run_fold(j) for j in jobs]
    if log is not None:
        for f, r in zip(folds, reports):
            log({"fold": f.index, "test_weeks": list(f.test_weeks), **{k: v for k, v in r.as_dict().items() if k != "per_step"}})
    return CVReport(reports)


def format_table(rows: dict[str, dict[str, tuple[float, float] | float]], columns=("RMSE", "MAE", "PCC", "F1")) -> str:
    """Markdown table; tuple cells print as ``mean±std``."""
    def cell(v):
        if isinstance(v, tuple):
            return f"{v[0]:.4f}±{v[1]:.4f}"
        return f"{v:.4f}"

    lines = ["| variant | " + " | ".join(columns) + " |", "|---" * (len(columns) + 1) + "|"]
    for name, vals in rows.items():
        lines.append(f"| {name} | " + " | ".join(cell(vals[c.lower()]) for c in columns) + " |")
    return "\n".join(lines)


def jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
