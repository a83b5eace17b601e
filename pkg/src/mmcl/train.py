"""Contrastive pretraining: multimodal, SimCLR (image only), SCARF (tabular only)."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from mmcl.augment import CorruptionSampler, ImagePolicy, augment_batch, cardiac_policy, corrupt_batch
from mmcl.checkpoint import Checkpoint, save_checkpoint, state_digest
from mmcl.config import digest, dump_yaml, to_plain
from mmcl.data.dataset import LABEL_FEATURE, PairedDataset, append_label_feature, prepare
from mmcl.data.tabular import one_hot_rows
from mmcl.errors import ConfigError, DegenerateBatchError, NumericError, PreconditionError
from mmcl.losses import LossConfig, multimodal_loss, ntxent_loss
from mmcl.model import ContrastiveModel, ModelConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    warmup_epochs: int = 10
    batch_size: int = 128
    base_lr: float = 3e-3
    weight_decay: float = 1e-4
    seed: int = 0
    mode: str = "multimodal"  # "multimodal" | "simclr" | "scarf"
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    laaf: bool = False
    laaf_exempt_from_corruption: bool = False
    corruption_rate: float = 0.3
    corruption_mode: str = "fixed"
    image_policy: ImagePolicy | None = None  # None: cardiac preset at the dataset's image size
    features: tuple[str, ...] | None = None  # restrict pretraining to these tabular features
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must be < epochs")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.mode not in ("multimodal", "simclr", "scarf"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.loss.supervision != "none" and self.mode != "multimodal":
            raise ConfigError("label supervision is only defined for multimodal pretraining")


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` then half-cosine decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps:
        raise ConfigError("warmup_steps must be smaller than total_steps")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    if n <= batch_size:
        return [order]
    n_full = n // batch_size
    return [order[k * batch_size:(k + 1) * batch_size] for k in range(n_full)]


def pretraining_view(dataset: PairedDataset, cfg: TrainConfig) -> PairedDataset:
    """Normalise/impute, restrict features and append the label column as configured."""
    ds = prepare(dataset)
    if cfg.features is not None:
        ds = ds.select_features(cfg.features)
    if cfg.laaf:
        ds = append_label_feature(ds)
    return ds


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: list[dict]

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]


def pretrain(dataset: PairedDataset, cfg: TrainConfig, run_dir: str | Path | None = None) -> PretrainResult:
    ds = pretraining_view(dataset, cfg)
    train = ds.split_rows("train")
    if len(train) < 2:
        raise PreconditionError("pretraining needs at least 2 train samples")
    images = ds.images[train]
    rows = ds.tabular.values[train]
    labels = ds.labels[train]
    schema = ds.schema
    size = images.shape[-1]
    policy = cfg.image_policy or cardiac_policy(size)

    sampler = None
    if cfg.mode in ("multimodal", "scarf"):
        exempt = ()
        if cfg.laaf and cfg.laaf_exempt_from_corruption:
            exempt = (schema.index(LABEL_FEATURE),)
        sampler = CorruptionSampler.from_matrix(
            rows, ds.tabular.missing_mask[train], cfg.corruption_rate,
            mode=cfg.corruption_mode, exempt=exempt,
        )

    torch.manual_seed(cfg.seed)
    model = ContrastiveModel(cfg.model, schema.encoded_width, cfg.mode)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay)

    steps_per_epoch = len(_batches(len(train), cfg.batch_size, np.random.default_rng(0)))
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch

    run = Path(run_dir) if run_dir is not None else None
    manifest = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": to_plain(cfg),
        "config_digest": digest(cfg),
        "schema": schema.to_dict(),
        "schema_digest": schema.digest(),
        "base_schema_digest": dataset.schema.digest(),
        "norm_stats": ds.tabular.norm_stats,
        "eval_exclude": list(ds.eval_exclude),
        "image_size": int(size),
    }
    metrics_path = None
    if run is not None:
        run.mkdir(parents=True, exist_ok=True)
        dump_yaml(cfg, run / "config.yaml")
        metrics_path = run / "metrics.csv"
        with open(metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "loss", "l_it", "l_ti", "lr", "skipped"])

    history: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        shuffle_rng = np.random.default_rng([cfg.seed, epoch])
        sums = np.zeros(3)
        used = skipped = 0
        lr = cfg.base_lr
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, shuffle_rng)):
            rng = np.random.default_rng([cfg.seed, epoch, b])
            lr = lr_at(step, total, warmup, cfg.base_lr)
            for g in opt.param_groups:
                g["lr"] = lr
            step += 1
            try:
                loss, l_it, l_ti = _batch_loss(model, cfg, policy, sampler, schema,
                                               images[idx], rows[idx], labels[idx], rng)
            except DegenerateBatchError as e:
                skipped += 1
                log.warning("epoch %d batch %d skipped: %s", epoch, b, e)
                continue
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b}: labels {np.bincount(labels[idx]).tolist()}, "
                    f"image mean {images[idx].mean():.4g}, tabular abs max {np.abs(rows[idx]).max():.4g}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += [loss.item(), l_it, l_ti]
            used += 1
        mean = sums / max(used, 1) if used else np.full(3, np.nan)
        rec = {"epoch": epoch + 1, "loss": float(mean[0]), "l_it": float(mean[1]),
               "l_ti": float(mean[2]), "lr": lr, "skipped": skipped}
        history.append(rec)
        log.info("epoch %d loss %.4f", epoch + 1, rec["loss"])
        if metrics_path is not None:
            with open(metrics_path, "a", newline="") as fh:
                csv.writer(fh).writerow([rec[k] for k in ("epoch", "loss", "l_it", "l_ti", "lr", "skipped")])
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
                save_checkpoint(Checkpoint(model, dict(manifest)), run / "checkpoints" / f"epoch_{epoch + 1}")

    model.eval()
    manifest["final_loss"] = history[-1]["loss"]
    manifest["param_digest"] = state_digest(model)
    ckpt = Checkpoint(model, manifest)
    if run is not None:
        save_checkpoint(ckpt, run / "checkpoints" / f"epoch_{cfg.epochs}")
        (run / "manifest.json").write_text(json.dumps(to_plain(ckpt.manifest), indent=2))
    return PretrainResult(ckpt, history)


def _batch_loss(model, cfg, policy, sampler, schema, images, rows, labels, rng):
    if cfg.mode == "multimodal":
        x_img = augment_batch(images, policy, rng)
        x_tab = torch.as_tensor(one_hot_rows(corrupt_batch(rows, sampler, rng), schema), dtype=torch.float32)
        z_i = model.project_images(x_img)
        z_t = model.project_tabular(x_tab)
        out = multimodal_loss(z_i, z_t, cfg.loss, torch.as_tensor(labels))
        return out.total, out.l_it.item(), out.l_ti.item()
    if cfg.mode == "simclr":
        a = model.project_images(augment_batch(images, policy, rng))
        b = model.project_images(augment_batch(images, policy, rng))
        loss = ntxent_loss(a, b, cfg.loss.temperature)
        return loss, loss.item(), loss.item()
    corrupted = one_hot_rows(corrupt_batch(rows, sampler, rng), schema)
    a = model.project_tabular(torch.as_tensor(corrupted, dtype=torch.float32))
    b = model.project_tabular(torch.as_tensor(one_hot_rows(rows, schema), dtype=torch.float32))
    loss = ntxent_loss(a, b, cfg.loss.temperature)
    return loss, loss.item(), loss.item()
