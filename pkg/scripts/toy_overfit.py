"""Fit the 5-location toy set with and without the spectral term and report both runs."""

import argparse
import json

from hetfuse.experiments import TOY_CONFIG, toy_overfit


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=TOY_CONFIG.max_steps)
    p.add_argument("--seed", type=int, default=TOY_CONFIG.seed)
    args = p.parse_args()
    base = TOY_CONFIG.replace(max_steps=args.steps, seed=args.seed)
    for name, cfg in (("full", base), ("w/o Spec", base.replace(use_spec=False))):
        r = toy_overfit(cfg)
        print(json.dumps({"variant": name, "rmse": r["rmse"], "spec": r["spec"], "steps": r["steps"]}), flush=True)


if __name__ == "__main__":
    main()
