"""Generate a seeded synthetic dataset and run evaluate, ablate and the lambda1 sweep on it."""

import argparse
import sys
from pathlib import Path

from hetfuse.cli import main


def run() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="protocol_out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--locations", type=int, default=8)
    p.add_argument("--weeks", type=int, default=45)
    p.add_argument("--epochs", type=int, default=5)
    args = p.parse_args()
    out = Path(args.out)
    data = out / "data"
    code = main(["gen-synth", "--n-locations", str(args.locations), "--weeks", str(args.weeks),
                 "--seed", str(args.seed), "--out", str(data)])
    common = ["--data", str(data), "--seed", str(args.seed), "--T", "4", "--H", "4", "--epochs", str(args.epochs)]
    for command in ("evaluate", "ablate", "sweep-lambda1"):
        code = code or main([command, *common, "--out", str(out / f"{command}.jsonl")])
    return code


if __name__ == "__main__":
    sys.exit(run())
