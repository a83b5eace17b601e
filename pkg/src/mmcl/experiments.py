"""Pretrain -> finetune grids reproducing the structure of the result tables.

Experiments: ``baselines``, ``low_data``, ``morphometric_ablation``,
``laaf_comparison``. Each writes ``results.csv`` (one line per seed),
``summary.csv`` (mean/std), ``table.csv`` and, for ``low_data``, a plot.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from mmcl.attribution import attribute
from mmcl.checkpoint import Checkpoint
from mmcl.config import digest, dump_yaml
from mmcl.data.dataset import PairedDataset, morphometric_names, non_morphometric_names
from mmcl.data.synthetic import SyntheticConfig, generate_synthetic
from mmcl.errors import ConfigError
from mmcl.evaluation import EvalConfig, finetune
from mmcl.model import ContrastiveModel
from mmcl.train import PretrainResult, TrainConfig, pretrain, pretraining_view

log = logging.getLogger(__name__)

EXPERIMENTS = ("baselines", "low_data", "morphometric_ablation", "laaf_comparison")
LOW_DATA_FRACTIONS = (1.0, 0.1, 0.01)

LAAF_ROWS = {
    "baseline": dict(supervision="none", laaf=False),
    "LaaF": dict(supervision="none", laaf=True),
    "FN elim": dict(supervision="fn_elimination", laaf=False),
    "FN elim+LaaF": dict(supervision="fn_elimination", laaf=True),
    "SupCon": dict(supervision="supcon", laaf=False),
    "SupCon+LaaF": dict(supervision="supcon", laaf=True),
}


@dataclass
class ExperimentSpec:
    name: str = "baselines"
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    modes: tuple[str, ...] = ("frozen",)
    fractions: tuple[float, ...] = LOW_DATA_FRACTIONS
    attribution_steps: int = 64
    attribution_samples: int = 512

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")


class PretrainCache:
    """Memoises pretraining runs by (dataset key, train config digest)."""

    def __init__(self):
        self._runs: dict[tuple[str, str], PretrainResult] = {}

    def get(self, dataset: PairedDataset, cfg: TrainConfig, key: str) -> PretrainResult:
        k = (key, digest(cfg))
        if k not in self._runs:
            log.info("pretraining %s (%s)", cfg.mode, k[1])
            self._runs[k] = pretrain(dataset, cfg)
        return self._runs[k]


def dataset_key(dataset: PairedDataset) -> str:
    h = hashlib.sha256()
    for arr in (dataset.images, dataset.tabular.values, dataset.labels, dataset.splits):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(dataset.schema.digest().encode())
    return h.hexdigest()[:16]


def untrained_checkpoint(dataset: PairedDataset, cfg: TrainConfig) -> Checkpoint:
    """Randomly initialised image encoder for the supervised baseline."""
    ds = pretraining_view(dataset, replace(cfg, laaf=False, features=None))
    torch.manual_seed(cfg.seed)
    model = ContrastiveModel(cfg.model, ds.schema.encoded_width, "simclr")
    manifest = {
        "schema": ds.schema.to_dict(),
        "schema_digest": ds.schema.digest(),
        "base_schema_digest": dataset.schema.digest(),
        "norm_stats": ds.tabular.norm_stats,
        "eval_exclude": [],
        "image_size": int(ds.images.shape[-1]),
    }
    return Checkpoint(model, manifest)


@dataclass
class ExperimentReport:
    name: str
    results: pd.DataFrame  # experiment, model, mode, fraction, seed, metric
    summary: pd.DataFrame  # experiment, model, mode, fraction, mean, std (+ extras)
    table: pd.DataFrame

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.results.to_csv(out / "results.csv", index=False)
        self.summary.to_csv(out / "summary.csv", index=False)
        self.table.to_csv(out / "table.csv", index=False)
        if self.name == "low_data":
            plot_low_data(self.summary, out / "low_data")
        return out


def _record(rows, summary, name, model, mode, fraction, res, **extra):
    for seed, m in zip(res_seeds(res), res.test_metrics):
        rows.append(dict(experiment=name, model=model, mode=mode, fraction=fraction, seed=seed, metric=m))
    summary.append(dict(experiment=name, model=model, mode=mode, fraction=fraction, mean=res.mean,
                        std=res.std, metric_name=res.metric_name, best_lr=res.best_lr,
                        n_train=res.n_train, **extra))


def res_seeds(res) -> list[int]:
    return [c.seed for c in res.cells if c.lr == res.best_lr]


def run_experiment_suite(
    spec: ExperimentSpec, dataset: PairedDataset | None = None, cache: PretrainCache | None = None,
    out_dir: str | Path | None = None,
) -> ExperimentReport:
    dataset = dataset if dataset is not None else generate_synthetic(spec.synthetic)
    cache = cache or PretrainCache()
    key = dataset_key(dataset)
    rows: list[dict] = []
    summary: list[dict] = []
    name = spec.name
    base = spec.train

    def evaluate(ckpt, mode, fraction=1.0):
        return finetune(ckpt, dataset, replace(spec.eval, mode=mode, fraction=fraction))

    if name in ("baselines", "low_data"):
        fractions = (1.0,) if name == "baselines" else spec.fractions
        models = {
            "SimCLR": replace(base, mode="simclr", laaf=False, features=None),
            "Multimodal": replace(base, mode="multimodal"),
        }
        for fraction in fractions:
            if "trainable" in spec.modes:
                res = evaluate(untrained_checkpoint(dataset, base), "trainable", fraction)
                _record(rows, summary, name, "Supervised", "trainable", fraction, res)
            for model_name, cfg in models.items():
                ckpt = cache.get(dataset, cfg, key).checkpoint
                for mode in spec.modes:
                    _record(rows, summary, name, model_name, mode, fraction, evaluate(ckpt, mode, fraction))
        table = _pivot(summary, ["model"], ["mode", "fraction"])

    elif name == "morphometric_ablation":
        feature_sets = {
            "All Features": None,
            "Morphometric Features": tuple(morphometric_names(dataset.schema)),
            "Non-Morphometric Features": tuple(non_morphometric_names(dataset.schema)),
        }
        full = cache.get(dataset, replace(base, mode="multimodal", features=None), key)
        report = attribute(full.checkpoint, dataset, steps=spec.attribution_steps,
                           max_samples=spec.attribution_samples)
        shares = {
            "All Features": 100.0,
            "Morphometric Features": 100 * report.morphometric_share,
            "Non-Morphometric Features": 100 * report.non_morphometric_share,
        }
        for row_name, feats in feature_sets.items():
            run = cache.get(dataset, replace(base, mode="multimodal", features=feats), key)
            n_feat = len(dataset.schema) if feats is None else len(feats)
            for mode in spec.modes:
                _record(rows, summary, name, row_name, mode, 1.0, evaluate(run.checkpoint, mode),
                        n_features=n_feat, importance_pct=shares[row_name], final_loss=run.final_loss)
        table = pd.DataFrame(summary)[["model", "n_features", "importance_pct", "final_loss", "mode",
                                       "mean", "std"]]

    else:  # laaf_comparison
        for row_name, opts in LAAF_ROWS.items():
            cfg = replace(base, mode="multimodal", laaf=opts["laaf"],
                          loss=replace(base.loss, supervision=opts["supervision"]))
            run = cache.get(dataset, cfg, key)
            for mode in spec.modes:
                _record(rows, summary, name, row_name, mode, 1.0, evaluate(run.checkpoint, mode),
                        final_loss=run.final_loss)
        table = _pivot(summary, ["model"], ["mode"])
        table = table.set_index("model").loc[list(LAAF_ROWS)].reset_index()

    report = ExperimentReport(name, pd.DataFrame(rows), pd.DataFrame(summary), table)
    if out_dir is not None:
        report.save(out_dir)
        dump_yaml(spec, Path(out_dir) / "config.yaml")
    return report


def _pivot(summary: list[dict], index: list[str], columns: list[str]) -> pd.DataFrame:
    df = pd.DataFrame(summary)
    df["cell"] = df.apply(lambda r: f"{r['mean'] * 100:.2f}±{r['std'] * 100:.2f}", axis=1)
    wide = df.pivot_table(index=index, columns=columns, values="cell", aggfunc="first", sort=False)
    wide.columns = ["/".join(str(c) for c in (col if isinstance(col, tuple) else (col,)))
                    for col in wide.columns]
    return wide.reset_index()


def plot_low_data(summary: pd.DataFrame, stem: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for (model, mode), grp in summary.groupby(["model", "mode"], sort=False):
        grp = grp.sort_values("n_train")
        x, m, s = grp["n_train"].to_numpy(), grp["mean"].to_numpy(), grp["std"].to_numpy()
        ax.plot(x, m, marker="o", label=f"{model} ({mode})")
        ax.fill_between(x, m - s, m + s, alpha=0.2)
    ax.set_xscale("log")
    ax.set_xlabel("finetuning training samples")
    ax.set_ylabel(str(summary["metric_name"].iloc[0]))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(f"{stem}.svg")
    fig.savefig(f"{stem}.png", dpi=120)
    plt.close(fig)

