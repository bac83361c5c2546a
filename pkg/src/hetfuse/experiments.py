"""Canned experiment setups shared by scripts, CLI and tests."""

from __future__ import annotations

import time

import numpy as np

from .config import RunConfig
from .fusion import codes_to_int, lsh_codes, random_hyperplanes, sample_candidates
from .synth import SynthSpec, synthesize
from .training import evaluate_windows, prepare, train, window_starts

TOY_SPEC = SynthSpec(n_locations=5, weeks=20, strains=2, seed=0, noise="none")
# Settings from the pilot runs recorded in the notes. One hash bit with
# tau_h = 1 and p_keep = 0 keep every location pair as a weighted edge, which
# removes the sampler's discontinuities from the optimisation path.
TOY_CONFIG = RunConfig(
    d=24, B=1, p_keep=0.0, normalization="log_minmax", lambda2=0.0, dropout=0.0,
    lr=0.05, momentum=0.9, lr_schedule="cosine", clip_norm=1.0, batch_size=4,
    epochs=10_000, max_steps=2000, seed=0,
)


def toy_overfit(config: RunConfig = TOY_CONFIG, spec: SynthSpec = TOY_SPEC) -> dict:
    """Fit every window of a small synthetic set; report training RMSE and final spectral loss."""
    ds = synthesize(spec)
    prep = prepare(ds, config)
    starts = window_starts(ds.n_weeks, config.T, config.H)
    result = train(prep, config, starts)
    final = evaluate_windows(prep, starts, result.params, config)
    return {"rmse": final["rmse"], "spec": final["spec"], "pred": final["pred"],
            "steps": result.history[-1]["steps"] if result.history else 0, "history": result.history}


def bench_lsh(sizes=(1000, 2000, 4000), d: int = 8, B: int = 10, M_max: int = 1000, repeats: int = 5,
              seed: int = 0) -> list[dict]:
    """Wall-clock split of the candidate sampler into hashing, sorting and everything else.

    Each entry reports the best of ``repeats`` runs in seconds.
    """
    rng = np.random.default_rng(seed)
    planes = random_hyperplanes(B, d, rng)
    rows = []
    for n in sizes:
        X = rng.standard_normal((n, d))
        best = {"hash": np.inf, "sort": np.inf, "total": np.inf}
        pairs = 0
        for _ in range(repeats):
            t0 = time.perf_counter()
            codes = lsh_codes(X, planes)
            t1 = time.perf_counter()
            keys = codes_to_int(codes)
            np.lexsort((np.arange(n), keys))
            t2 = time.perf_counter()
            cand = sample_candidates(codes, M_max, 1)
            t3 = time.perf_counter()
            best["hash"] = min(best["hash"], t1 - t0)
            best["sort"] = min(best["sort"], t2 - t1)
            best["total"] = min(best["total"], t3 - t2)
            pairs = len(cand)
        rows.append({"n": n, "hash_s": best["hash"], "sort_s": best["sort"],
                     "non_sort_s": max(best["total"] - best["sort"], 0.0), "sampler_s": best["total"],
                     "pairs": pairs, "all_pairs": n * (n - 1) // 2})
    return rows
