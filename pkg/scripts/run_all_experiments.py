#!/usr/bin/env python3
"""Run the full comparison set into results/.

Produces every CSV family the plotting package consumes: decision-map
CSVs, the bisection artifacts, the evolution time series, the training
log, and the five sweep files.  Expect roughly 15-30 minutes end to end;
pass --quick for a smoke-scale run.
"""

import argparse
import sys
from pathlib import Path

from relay_aoi.cli import main as cli_main

SWEEPS = [
    "budget_sweep",
    "arrival_sweep",
    "reliability_sweep",
    "source_count_sweep",
    "weight_sweep",
]


def run(argv):
    code = cli_main(argv)
    if code != 0:
        print(f"step failed ({code}): {' '.join(argv)}", file=sys.stderr)
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="results")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true", help="tiny horizons, no solver sweeps")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = Path(__file__).resolve().parent.parent / "configs"

    run(["structure", "--config", str(configs / "structure_maps.cfg"),
         "--out", str(out / "structure"), "--seed", str(args.seed)])
    run(["solve", "--config", str(configs / "two_source.cfg"),
         "--out", str(out / "solve"), "--seed", str(args.seed)])
    run(["simulate", "--config", str(configs / "dpp_evolution.cfg"),
         "--out", str(out / "dpp_evolution"), "--seed", str(args.seed)])

    if args.quick:
        override = out / "_quick.cfg"
        for name in SWEEPS:
            base = (configs / f"{name}.cfg").read_text()
            base = base.replace("experiment.horizon = 100000", "experiment.horizon = 5000")
            base = base.replace("experiment.replications = 5", "experiment.replications = 2")
            base = base.replace("experiment.policies = rvia,rvia-lower,dpp,greedy",
                                "experiment.policies = dpp,greedy")
            override.write_text(base)
            run(["compare", "--config", str(override), "--out", str(out / "sweeps"),
                 "--seed", str(args.seed)])
        override.unlink()
    else:
        for name in SWEEPS:
            run(["compare", "--config", str(configs / f"{name}.cfg"),
                 "--out", str(out / "sweeps"), "--seed", str(args.seed)])

    train_cfg = configs / "drl_training.cfg"
    if args.quick:
        override = out / "_quick_train.cfg"
        override.write_text(
            (train_cfg.read_text())
            .replace("drl.hidden_sizes = 512,256", "drl.hidden_sizes = 64,64")
            .replace("drl.episodes = 300", "drl.episodes = 20")
        )
        run(["train", "--config", str(override), "--out", str(out / "training"),
             "--seed", str(args.seed)])
        override.unlink()
    else:
        run(["train", "--config", str(train_cfg), "--out", str(out / "training"),
             "--seed", str(args.seed)])
    print(f"all artifacts under {out}/")


if __name__ == "__main__":
    main()
