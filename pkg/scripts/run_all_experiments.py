"""Run every named experiment on one synthetic dataset, sharing pretraining runs.

    python3 scripts/run_all_experiments.py --config scripts/configs/desk.yaml --out runs/desk
"""
import argparse
import logging
import time
from pathlib import Path

from mmcl.cli import load_run_config
from mmcl.data import generate_synthetic
from mmcl.experiments import EXPERIMENTS, ExperimentSpec, PretrainCache, run_experiment_suite


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).parent / "configs" / "desk.yaml"))
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--only", nargs="*", choices=EXPERIMENTS, default=list(EXPERIMENTS))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_run_config(args.config, args.seed)
    dataset = generate_synthetic(cfg.synthetic)
    cache = PretrainCache()
    for name in args.only:
        t0 = time.time()
        spec = ExperimentSpec(
            name=name, synthetic=cfg.synthetic, train=cfg.train, eval=cfg.eval,
            modes=cfg.experiment.modes, fractions=cfg.experiment.fractions,
            attribution_steps=cfg.experiment.attribution_steps,
            attribution_samples=cfg.experiment.attribution_samples,
        )
        report = run_experiment_suite(spec, dataset=dataset, cache=cache, out_dir=Path(args.out) / name)
        print(f"== {name} ({time.time() - t0:.0f}s)")
        print(report.table.to_string(index=False))


if __name__ == "__main__":
    main()
