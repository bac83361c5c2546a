"""Batch command line: data preparation, training, forecasting and evaluation harnesses.

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import pickle
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .autograd import NonFiniteError
from .config import ConfigError, RunConfig, dump_config, load_config
from .data import DataError, Dataset, load_dataset
from .experiments import bench_lsh
from .genetics import NoComparableSitesError, SaturationError
from .graph import build_snapshots
from .model import init_params
from .spectral import EigenError
from .synth import NOISE_MODES, generate_synthetic
from .training import (NormRecord, NumericalError, evaluate_cv, format_table, jsonl, predict_counts, prepare,
                       train)

CACHE_ENV = "HETFUSE_CACHE_DIR"
LAMBDA1_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
ABLATIONS = {
    "full": {},
    "w/o CS": {"use_smoothing": False},
    "w/o gen": {"use_genetic": False},
    "w/o CS+gen": {"use_smoothing": False, "use_genetic": False},
    "w/o Spec": {"use_spec": False},
}

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ arguments


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("configuration overrides")
    group.add_argument("--config", help="key = value or .json file mirroring the config fields")
    for f in fields(RunConfig):
        if f.name == "seed":
            continue
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="V", default=None)
    return parent


def _data_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--data", required=True, help="dataset directory")
    parent.add_argument("--format", choices=("avian", "flujapan"), default="avian")
    return parent


def _config_from(args) -> RunConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    cfg, data = _config_parent(), _data_parent()
    p = _Parser(prog="hetfuse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("prepare", parents=[cfg, data], help="build and cache weekly snapshots")
    s.add_argument("--seed", type=int, default=None)

    s = sub.add_parser("train", parents=[cfg, data], help="fit a model on every window")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="model directory to write")

    s = sub.add_parser("predict", parents=[data], help="forecast H weeks after the last window")
    s.add_argument("--model", required=True, help="directory written by train")
    s.add_argument("--start", type=int, default=None, help="index of the first input week (default: last T weeks)")
    s.add_argument("--out", required=True, help="CSV path")

    for name, text in (("evaluate", "blocked cross-validation metrics"), ("ablate", "component ablation table"),
                       ("sweep-lambda1", "spectral weight sweep")):
        s = sub.add_parser(name, parents=[cfg, data], help=text)
        s.add_argument("--seed", type=int, required=True)
        s.add_argument("--out", required=True, help="report path (JSON lines; a .md table is written alongside)")
        s.add_argument("--threads", type=int, default=1, help="maximum worker processes for folds")

    s = sub.add_parser("bench-lsh", help="scaling benchmark of the hash-based candidate sampler")
    s.add_argument("--sizes", default="1000,2000,4000")
    s.add_argument("--dim", type=int, default=8)
    s.add_argument("--bits", type=int, default=10)
    s.add_argument("--m-max", type=int, default=1000)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="optional JSON lines output")

    s = sub.add_parser("gen-synth", help="write a seeded synthetic dataset")
    s.add_argument("--n-locations", type=int, default=8)
    s.add_argument("--weeks", type=int, default=40)
    s.add_argument("--strains", type=int, default=2)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--noise", choices=NOISE_MODES, default="poisson")
    s.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------- cache


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "hetfuse"))


_SNAPSHOT_FIELDS = ("sigma", "sigma_g", "w_min", "d_gen", "use_genetic")


def _cache_key(data: Path, fmt: str, config: RunConfig) -> str:
    h = hashlib.sha256(fmt.encode())
    for path in sorted(data.iterdir()):
        if path.is_file():
            h.update(path.name.encode())
            h.update(path.read_bytes())
    h.update(json.dumps({k: getattr(config, k) for k in _SNAPSHOT_FIELDS}, sort_keys=True).encode())
    return h.hexdigest()[:24]


def load_snapshots(data: Path, fmt: str, ds: Dataset, config: RunConfig, build: bool = True):
    """Snapshots from the cache when present; otherwise built (and stored when ``build``)."""
    path = cache_dir() / f"snapshots-{_cache_key(data, fmt, config)}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh), path, True
    snaps = build_snapshots(ds, config)
    if build:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            pickle.dump(snaps, fh)
    return snaps, path, False


# ------------------------------------------------------------------- commands


def _load(args) -> Dataset:
    return load_dataset(args.data, args.format)


def cmd_prepare(args) -> int:
    config = _config_from(args)
    ds = _load(args)
    snaps, path, hit = load_snapshots(Path(args.data), args.format, ds, config)
    print(json.dumps({"cache": str(path), "reused": hit, "weeks": len(snaps), "locations": ds.n_locations,
                      "cases": sum(s.n_cases for s in snaps)}))
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config_from(args)
    ds = _load(args)
    snaps, _, _ = load_snapshots(Path(args.data), args.format, ds, config)
    prep = prepare(ds, config, snapshots=snaps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(prep, config, log=lambda r: print(json.dumps(r, sort_keys=True), flush=True))
    np.savez(out / "params.npz", **result.params.arrays())
    dump_config(config, out / "config.txt")
    (out / "normalization.json").write_text(json.dumps({
        "infected": {"scheme": prep.target_norm.scheme, "params": prep.target_norm.params},
        "population": {"scheme": prep.population_norm.scheme, "params": prep.population_norm.params},
        "case_dim": prep.case_dim,
    }, indent=1))
    jsonl(out / "history.jsonl", result.history)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = Path(args.model)
    config = load_config(model / "config.txt")
    meta = json.loads((model / "normalization.json").read_text())
    norms = (NormRecord(**meta["infected"]), NormRecord(**meta["population"]))
    ds = _load(args)
    snaps, _, _ = load_snapshots(Path(args.data), args.format, ds, config)
    prep = prepare(ds, config, snapshots=snaps, norms=norms)
    params = init_params(config, meta["case_dim"])
    with np.load(model / "params.npz") as arrays:
        params.load_arrays(dict(arrays))
    start = ds.n_weeks - config.T if args.start is None else args.start
    if not 0 <= start <= ds.n_weeks - config.T:
        raise UsageError(f"--start must lie in 0..{ds.n_weeks - config.T}")
    yhat = predict_counts(prep, start, params, config)
    first = ds.weeks[start] + config.T
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", *ds.location_ids])
        for h in range(config.H):
            w.writerow([first + h, *(repr(float(v)) for v in yhat[h])])
    return EXIT_OK


def _write_reports(out: Path, records: list[dict], table: str) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    jsonl(out, records)
    out.with_suffix(".md").write_text(table + "\n")
    print(table)


def _cv_records(name: str, report) -> list[dict]:
    recs = [{"variant": name, "fold": i, **{k: v for k, v in r.as_dict().items() if k != "per_step"}}
            for i, r in enumerate(report.folds)]
    summary = report.summary()
    recs.append({"variant": name, "fold": "summary",
                 **{f"{k}_mean": v[0] for k, v in summary.items()}, **{f"{k}_std": v[1] for k, v in summary.items()}})
    return recs


def _run_variants(args, variants: dict[str, dict]) -> int:
    config = _config_from(args)
    ds = _load(args)
    records, rows = [], {}
    for name, changes in variants.items():
        cfg = config.replace(**changes)
        snaps, _, _ = load_snapshots(Path(args.data), args.format, ds, cfg)
        report = evaluate_cv(ds, cfg, threads=args.threads, snapshots=snaps)
        records.extend(_cv_records(name, report))
        rows[name] = report.summary()
    _write_reports(Path(args.out), records, format_table(rows))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    return _run_variants(args, {"model": {}})


def cmd_ablate(args) -> int:
    return _run_variants(args, ABLATIONS)


def cmd_sweep(args) -> int:
    return _run_variants(args, {f"lambda1={v:g}": {"lambda1": v} for v in LAMBDA1_GRID})


def cmd_bench(args) -> int:
    try:
        sizes = tuple(int(s) for s in args.sizes.split(","))
    except ValueError as exc:
        raise UsageError("--sizes must be comma-separated integers") from exc
    rows = bench_lsh(sizes, d=args.dim, B=args.bits, M_max=args.m_max, repeats=args.repeats, seed=args.seed)
    lines = ["| N | hash (ms) | sort (ms) | non-sort (ms) | pairs | non-sort growth |", "|---|---|---|---|---|---|"]
    for r in rows:
        growth = r["non_sort_s"] / rows[0]["non_sort_s"] if rows[0]["non_sort_s"] > 0 else float("nan")
        lines.append(f"| {r['n']} | {1e3 * r['hash_s']:.3f} | {1e3 * r['sort_s']:.3f} | "
                     f"{1e3 * r['non_sort_s']:.3f} | {r['pairs']} | {growth:.2f}x |")
    print("\n".join(lines))
    if args.out:
        jsonl(args.out, rows)
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    ds = generate_synthetic(args.n_locations, args.weeks, args.strains, args.seed, args.out, noise=args.noise)
    print(json.dumps({"out": args.out, "locations": ds.n_locations, "weeks": ds.n_weeks, "cases": len(ds.cases)}))
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
    "ablate": cmd_ablate, "sweep-lambda1": cmd_sweep, "bench-lsh": cmd_bench, "gen-synth": cmd_gen_synth,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SaturationError, NoComparableSitesError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NonFiniteError, EigenError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining value errors come from inconsistent data (e.g. too few weeks for the folds)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
