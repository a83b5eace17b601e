"""Command line entry point: ``mmcl <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 data/contract error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from mmcl.config import build, dump_yaml, load_yaml, to_plain
from mmcl.data.synthetic import SyntheticConfig
from mmcl.errors import MMCLError, NumericError
from mmcl.evaluation import EvalConfig
from mmcl.experiments import EXPERIMENTS, LOW_DATA_FRACTIONS
from mmcl.model import ModelConfig
from mmcl.train import TrainConfig

log = logging.getLogger("mmcl")


@dataclass
class ExperimentOptions:
    modes: tuple[str, ...] = ("frozen",)
    fractions: tuple[float, ...] = LOW_DATA_FRACTIONS
    attribution_steps: int = 64
    attribution_samples: int = 512


@dataclass
class RunConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    experiment: ExperimentOptions = field(default_factory=ExperimentOptions)
    seed: int | None = None

    def with_seed(self, seed: int | None) -> "RunConfig":
        """Route a single seed into every random component."""
        if seed is None:
            return self
        return replace(
            self,
            seed=seed,
            synthetic=replace(self.synthetic, seed=seed),
            train=replace(self.train, seed=seed),
            eval=replace(self.eval, subsample_seed=seed,
                         seeds=tuple(seed + i for i in range(len(self.eval.seeds)))),
        )


def load_run_config(path: str | None, seed: int | None = None) -> RunConfig:
    data = load_yaml(path) if path else {}
    cfg = build(RunConfig, data)
    return cfg.with_seed(seed if seed is not None else cfg.seed)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mmcl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write the synthetic paired dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)

    t = sub.add_parser("pretrain", help="contrastive pretraining")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--mode", choices=["multimodal", "simclr", "scarf"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--laaf", action="store_true", default=None)
    t.add_argument("--supervision", choices=["none", "fn_elimination", "supcon"])
    t.add_argument("--paper-scale", action="store_true")

    f = sub.add_parser("finetune", help="linear probe / full finetune from a checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--mode", choices=["frozen", "trainable"])
    f.add_argument("--fraction", type=float)
    f.add_argument("--config")
    f.add_argument("--out")
    f.add_argument("--seed", type=int)
    f.add_argument("--max-epochs", type=int)
    f.add_argument("--modality", choices=["image", "tabular"])

    a = sub.add_parser("attribute", help="integrated-gradients feature importance")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out")
    a.add_argument("--steps", type=int, default=64)
    a.add_argument("--max-samples", type=int, default=2048)
    a.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("experiment", help="run a named experiment grid")
    e.add_argument("--name", required=True, choices=EXPERIMENTS)
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--seed", type=int)

    i = sub.add_parser("inspect", help="print a run's manifest and metrics")
    i.add_argument("--run", required=True)
    return p


def _default_out(ckpt_path: Path, name: str) -> Path:
    run = ckpt_path.parent.parent if ckpt_path.parent.name == "checkpoints" else ckpt_path.parent
    return run / name


def _run_config_for(ckpt_path: Path, args) -> RunConfig:
    """Explicit --config, else the run_config.yaml stored by ``pretrain``."""
    stored = _default_out(ckpt_path, "run_config.yaml")
    path = args.config or (str(stored) if stored.exists() else None)
    return load_run_config(path, args.seed)


def cmd_generate(args) -> int:
    from mmcl.data import generate_synthetic, save_dataset

    cfg = load_run_config(args.config, args.seed)
    ds = generate_synthetic(cfg.synthetic)
    save_dataset(ds, args.out, extra={"generator": to_plain(cfg.synthetic)})
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from mmcl.data import load_dataset
    from mmcl.train import pretrain

    cfg = load_run_config(args.config, args.seed)
    train = cfg.train
    if args.paper_scale:
        train = replace(train, model=ModelConfig.paper_scale(), epochs=500, batch_size=512)
    overrides = {k: v for k, v in (("mode", args.mode), ("epochs", args.epochs), ("laaf", args.laaf))
                 if v is not None}
    if args.supervision:
        overrides["loss"] = replace(train.loss, supervision=args.supervision)
    if args.epochs is not None and train.warmup_epochs >= args.epochs:
        overrides["warmup_epochs"] = max(0, args.epochs // 5)
    train = replace(train, **overrides)
    ds = load_dataset(args.data)
    res = pretrain(ds, train, args.out)
    dump_yaml(replace(cfg, train=train), Path(args.out) / "run_config.yaml")
    print(f"final loss {res.final_loss:.4f}; checkpoint {Path(args.out) / 'checkpoints' / f'epoch_{train.epochs}'}")
    return 0


def cmd_finetune(args) -> int:
    from mmcl.checkpoint import load_checkpoint
    from mmcl.data import load_dataset

    ckpt_path = Path(args.checkpoint)
    cfg = _run_config_for(ckpt_path, args)
    overrides = {k: v for k, v in (("mode", args.mode), ("fraction", args.fraction),
                                   ("max_epochs", args.max_epochs), ("modality", args.modality))
                 if v is not None}
    ecfg = replace(cfg.eval, **overrides)
    ds = load_dataset(args.data)
    ckpt = load_checkpoint(ckpt_path, ds)
    from mmcl.evaluation import finetune

    res = finetune(ckpt, ds, ecfg)
    out = Path(args.out) if args.out else _default_out(ckpt_path, f"finetune_{ecfg.mode}_{ecfg.fraction:g}")
    out.mkdir(parents=True, exist_ok=True)
    model = ckpt.manifest.get("mode", "unknown")
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "model", "mode", "fraction", "seed", "metric"])
        seeds = [c.seed for c in res.cells if c.lr == res.best_lr]
        for seed, m in zip(seeds, res.test_metrics):
            w.writerow(["finetune", model, ecfg.mode, ecfg.fraction, seed, repr(m)])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "model", "mode", "fraction", "metric_name", "best_lr", "mean", "std"])
        w.writerow(["finetune", model, ecfg.mode, ecfg.fraction, res.metric_name, res.best_lr,
                    repr(res.mean), repr(res.std)])
    dump_yaml(ecfg, out / "eval_config.yaml")
    print(f"{res.metric_name} {res.mean:.4f} ± {res.std:.4f} (lr {res.best_lr:g}); wrote {out / 'summary.csv'}")
    return 0


def cmd_attribute(args) -> int:
    from mmcl.attribution import attribute
    from mmcl.checkpoint import load_checkpoint
    from mmcl.data import load_dataset

    ds = load_dataset(args.data)
    ckpt_path = Path(args.checkpoint)
    ckpt = load_checkpoint(ckpt_path, ds)
    report = attribute(ckpt, ds, steps=args.steps, max_samples=args.max_samples, seed=args.seed)
    out = Path(args.out) if args.out else _default_out(ckpt_path, "attribution")
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "importance.csv")
    report.plot(out / "importance.svg")
    report.plot(out / "importance.png")
    print(f"morphometric share {report.morphometric_share:.3f}; top features: {report.ranking[:5]}")
    return 0


def cmd_experiment(args) -> int:
    from mmcl.experiments import ExperimentSpec, run_experiment_suite

    cfg = load_run_config(args.config, args.seed)
    spec = ExperimentSpec(
        name=args.name, synthetic=cfg.synthetic, train=cfg.train, eval=cfg.eval,
        modes=cfg.experiment.modes, fractions=cfg.experiment.fractions,
        attribution_steps=cfg.experiment.attribution_steps,
        attribution_samples=cfg.experiment.attribution_samples,
    )
    out = Path(args.out or f"runs/{args.name}")
    report = run_experiment_suite(spec, out_dir=out)
    print(report.table.to_string(index=False))
    return 0


def cmd_inspect(args) -> int:
    run = Path(args.run)
    manifest = run / "manifest.json"
    if not manifest.exists():
        raise MMCLError(f"{run}: no manifest.json")
    print(json.dumps(json.loads(manifest.read_text()), indent=2))
    for name in ("config.yaml", "metrics.csv"):
        path = run / name
        if path.exists():
            print(f"--- {name}")
            print(path.read_text(), end="")
    return 0


COMMANDS = {
    "generate": cmd_generate, "pretrain": cmd_pretrain, "finetune": cmd_finetune,
    "attribute": cmd_attribute, "experiment": cmd_experiment, "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except MMCLError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
