"""Linear probing / full finetuning from a pretrained checkpoint."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import rankdata

from mmcl.augment import eval_transform
from mmcl.checkpoint import Checkpoint, state_digest
from mmcl.data.dataset import PairedDataset, subsample_balanced
from mmcl.data.tabular import apply_normalization, impute, one_hot_rows
from mmcl.errors import ConfigError, ContractError, UndefinedMetricError
from mmcl.model import LinearClassifier

log = logging.getLogger(__name__)

LR_GRID = (3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


@dataclass
class EvalConfig:
    mode: str = "frozen"  # "frozen": linear probe; "trainable": encoder updated too
    lr_grid: tuple[float, ...] = LR_GRID
    min_delta: float = 0.0002
    patience: int = 10
    batch_size: int = 512
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    fraction: float = 1.0
    subsample_seed: int = 0
    max_epochs: int = 200
    modality: str = "image"  # "image" | "tabular"

    def __post_init__(self):
        if self.mode not in ("frozen", "trainable"):
            raise ConfigError(f"unknown eval mode {self.mode!r}")
        if not self.lr_grid:
            raise ConfigError("lr_grid must not be empty")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.modality not in ("image", "tabular"):
            raise ConfigError(f"unknown modality {self.modality!r}")


# --- metrics -------------------------------------------------------------------

def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def topk_accuracy(logits, labels, k: int = 1) -> float:
    """Fraction of rows whose label is among the k largest logits.

    Ties are broken toward the lower class index.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[1] < k:
        raise ValueError(f"k={k} exceeds the number of classes {logits.shape[1]}")
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


def task_metric(logits: np.ndarray, labels: np.ndarray) -> float:
    if logits.shape[1] == 2:
        return auc(logits[:, 1] - logits[:, 0], labels)
    return topk_accuracy(logits, labels, 1)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a ``min_delta`` gain."""

    def __init__(self, min_delta: float = 0.0002, patience: int = 10):
        self.min_delta, self.patience = min_delta, patience
        self.best = -np.inf
        self.best_epoch = -1
        self.wait = 0
        self.epoch = -1

    def step(self, metric: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        self.epoch += 1
        if metric > self.best + self.min_delta or self.best_epoch < 0:
            self.best, self.best_epoch, self.wait = metric, self.epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


# --- inputs --------------------------------------------------------------------

def _tabular_inputs(ckpt: Checkpoint, ds: PairedDataset) -> np.ndarray:
    """Encode rows the way the tabular encoder saw them; pretraining-only
    columns (appended labels) are fed as zeros."""
    schema = ckpt.schema
    exclude = set(ckpt.manifest.get("eval_exclude", []))
    tab = ds.tabular
    if tab.norm_stats is None:
        base = schema.select([n for n in schema.names if n not in exclude])
        tab = tab.columns([ds.schema.index(n) for n in base.names])
        tab = apply_normalization(tab, base, {k: tuple(v) for k, v in ckpt.manifest["norm_stats"].items()
                                             if k in base.names})
        if tab.missing_mask.any():
            tab = impute(tab, base)
        values = np.zeros((len(ds), len(schema)))
        for j, name in enumerate(schema.names):
            if name in exclude:
                values[:, j] = schema.features[j].categories[0]
            else:
                values[:, j] = tab.values[:, base.index(name)]
    else:
        values = tab.values
    enc = one_hot_rows(values, schema)
    for sl, spec in zip(schema.encoded_slices(), schema.features):
        if spec.name in exclude:
            enc[:, sl] = 0.0
    return enc.astype(np.float32)


def _inputs(ckpt: Checkpoint, ds: PairedDataset, modality: str) -> torch.Tensor:
    if modality == "image":
        return eval_transform(ds.images, ckpt.manifest.get("image_size", ds.images.shape[-1]))
    return torch.as_tensor(_tabular_inputs(ckpt, ds))


@torch.no_grad()
def embed(encoder: torch.nn.Module, x: torch.Tensor, batch_size: int = 512) -> torch.Tensor:
    encoder.eval()
    return torch.cat([encoder(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


@torch.no_grad()
def _logits(encoder, head, x, batch_size=512) -> np.ndarray:
    h = x if encoder is None else embed(encoder, x, batch_size)
    return head(h).numpy()


# --- training ----------------------------------------------------------------------

@dataclass
class CellResult:
    seed: int
    lr: float
    val_metric: float
    test_metric: float
    epochs: int
    best_epoch: int


def train_head(
    encoder, x_train, y_train, x_val, y_val, x_test, y_test, n_classes: int,
    lr: float, seed: int, cfg: EvalConfig,
) -> CellResult:
    """Fit one (seed, lr) cell. ``encoder`` is None when inputs are frozen embeddings."""
    torch.manual_seed(seed)
    in_dim = x_train.shape[1] if encoder is None else encoder.embedding_dim
    head = LinearClassifier(in_dim, n_classes)
    params = list(head.parameters())
    if encoder is not None:
        params += list(encoder.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    stopper = EarlyStopping(cfg.min_delta, cfg.patience)
    best_state = None
    y_t = torch.as_tensor(y_train)
    n = len(x_train)
    for epoch in range(cfg.max_epochs):
        if encoder is not None:
            encoder.train()
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[i:i + cfg.batch_size])
            h = x_train[idx] if encoder is None else encoder(x_train[idx])
            loss = F.cross_entropy(head(h), y_t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        val = task_metric(_logits(encoder, head, x_val, cfg.batch_size), y_val)
        stop = stopper.step(val)
        if stopper.improved:
            best_state = (copy.deepcopy(head.state_dict()),
                          None if encoder is None else copy.deepcopy(encoder.state_dict()))
        if stop:
            break
    head.load_state_dict(best_state[0])
    if encoder is not None:
        encoder.load_state_dict(best_state[1])
    test = task_metric(_logits(encoder, head, x_test, cfg.batch_size), y_test)
    return CellResult(seed, lr, stopper.best, test, stopper.epoch + 1, stopper.best_epoch + 1)


@dataclass
class FinetuneResult:
    best_lr: float
    test_metrics: list[float]
    mean: float
    std: float
    metric_name: str
    cells: list[CellResult] = field(default_factory=list)
    n_train: int = 0


def finetune(ckpt: Checkpoint, dataset: PairedDataset, cfg: EvalConfig | None = None) -> FinetuneResult:
    cfg = cfg or EvalConfig()
    ckpt.check_compatible(dataset)
    ds = dataset.eval_view()
    n_classes = ds.n_classes
    if n_classes == 2 or cfg.fraction < 1.0:
        ds = subsample_balanced(ds, cfg.fraction, cfg.subsample_seed)
    encoder = ckpt.model.encoder(cfg.modality)
    x_all = _inputs(ckpt, ds, cfg.modality)
    rows = {s: ds.split_rows(s) for s in ("train", "val", "test")}
    ys = {s: ds.labels[r] for s, r in rows.items()}

    before = state_digest(encoder)
    if cfg.mode == "frozen":
        feats = embed(encoder, x_all, cfg.batch_size)
        xs = {s: feats[r] for s, r in rows.items()}
    else:
        xs = {s: x_all[r] for s, r in rows.items()}

    cells = []
    for lr in cfg.lr_grid:
        for seed in cfg.seeds:
            enc = None if cfg.mode == "frozen" else copy.deepcopy(encoder)
            cell = train_head(enc, xs["train"], ys["train"], xs["val"], ys["val"],
                              xs["test"], ys["test"], n_classes, lr, seed, cfg)
            cells.append(cell)
            log.debug("lr %.0e seed %d val %.4f test %.4f", lr, seed, cell.val_metric, cell.test_metric)
    if state_digest(encoder) != before:
        raise ContractError("pretrained encoder changed during evaluation")

    # best mean validation metric; ties go to the smaller learning rate
    val_means = {lr: np.mean([c.val_metric for c in cells if c.lr == lr]) for lr in cfg.lr_grid}
    best_val = max(val_means.values())
    best_lr = min(lr for lr in cfg.lr_grid if val_means[lr] == best_val)
    tests = [c.test_metric for c in cells if c.lr == best_lr]
    std = float(np.std(tests, ddof=1)) if len(tests) > 1 else 0.0
    return FinetuneResult(
        best_lr=best_lr,
        test_metrics=tests,
        mean=float(np.mean(tests)),
        std=std,
        metric_name="auc" if n_classes == 2 else "top1",
        cells=cells,
        n_train=len(rows["train"]),
    )
