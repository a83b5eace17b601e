"""Paired image/tabular container and the transformations defined on it."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from mmcl.data.schema import FeatureSpec, TabularSchema
from mmcl.data.tabular import TabularMatrix, impute, normalize
from mmcl.errors import PreconditionError, SchemaError

SPLITS = ("train", "val", "test")
LABEL_FEATURE = "__label__"


@dataclass
class PairedDataset:
    images: np.ndarray  # N x C x H x W float32 in [0, 1]
    tabular: TabularMatrix
    labels: np.ndarray  # N int64
    splits: np.ndarray  # N strings from SPLITS
    schema: TabularSchema
    index: np.ndarray | None = None  # original row ids, kept through subsetting
    eval_exclude: tuple[str, ...] = ()  # features only visible during pretraining
    base_schema_digest: str | None = None

    def __post_init__(self):
        n = len(self.labels)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype="<U5")
        if self.index is None:
            self.index = np.arange(n)
        if not (len(self.images) == self.tabular.shape[0] == len(self.splits) == n):
            raise ValueError("images, tabular rows, labels and splits must align")
        if self.tabular.shape[1] != len(self.schema):
            raise SchemaError("tabular width does not match schema")
        bad = set(np.unique(self.splits)) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split names {sorted(bad)}")
        if self.base_schema_digest is None:
            self.base_schema_digest = self.schema.digest()

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split_rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def take(self, rows) -> "PairedDataset":
        rows = np.asarray(rows)
        return replace(
            self,
            images=self.images[rows],
            tabular=self.tabular.take(rows),
            labels=self.labels[rows],
            splits=self.splits[rows],
            index=self.index[rows],
        )

    def split(self, name: str) -> "PairedDataset":
        return self.take(self.split_rows(name))

    def select_features(self, names) -> "PairedDataset":
        """Keep only the named tabular features (schema order is preserved)."""
        names = set(names)
        unknown = names - set(self.schema.names)
        if unknown:
            raise SchemaError(f"unknown features {sorted(unknown)}")
        idx = [j for j, n in enumerate(self.schema.names) if n in names]
        return replace(
            self,
            tabular=self.tabular.columns(idx),
            schema=self.schema.select(names),
            eval_exclude=tuple(n for n in self.eval_exclude if n in names),
        )

    def eval_view(self) -> "PairedDataset":
        """Drop pretraining-only columns (e.g. the appended label)."""
        if not self.eval_exclude:
            return self
        keep = [n for n in self.schema.names if n not in self.eval_exclude]
        return self.select_features(keep)


def prepare(dataset: PairedDataset, tol: float = 1e-3, max_rounds: int = 10) -> PairedDataset:
    """Normalize with train-split statistics, then impute missing entries."""
    tab = dataset.tabular
    if tab.norm_stats is None:
        tab = normalize(tab, dataset.schema, rows=dataset.split_rows("train"))
    if tab.missing_mask.any():
        tab = impute(tab, dataset.schema, tol=tol, max_rounds=max_rounds)
    return replace(dataset, tabular=tab)


def append_label_feature(dataset: PairedDataset) -> PairedDataset:
    """Label-as-a-feature: add the class id as a categorical tabular column.

    Train rows carry their label. Other rows are marked missing (placeholder
    code = first class) so the value can never leak into evaluation; the
    column is listed in ``eval_exclude``.
    """
    if LABEL_FEATURE in dataset.schema.names:
        raise SchemaError(f"feature name {LABEL_FEATURE!r} already present")
    train = dataset.splits == "train"
    if not train.any():
        raise PreconditionError("append_label_feature needs labelled train rows")
    n_classes = dataset.n_classes
    spec = FeatureSpec(LABEL_FEATURE, "categorical", tuple(range(n_classes)), False)
    col = np.where(train, dataset.labels, 0).astype(np.float64)
    tab = dataset.tabular
    new_tab = TabularMatrix(
        np.column_stack([tab.values, col]),
        np.column_stack([tab.missing_mask, ~train]),
        tab.norm_stats,
    )
    return replace(
        dataset,
        tabular=new_tab,
        schema=TabularSchema(dataset.schema.features + (spec,)),
        eval_exclude=dataset.eval_exclude + (LABEL_FEATURE,),
    )


def _priority(n: int, seed: int) -> np.ndarray:
    """Rank of every row in a fixed seeded order (lower = picked first)."""
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return rank


def subsample_balanced(dataset: PairedDataset, fraction: float, seed: int = 0) -> PairedDataset:
    """Low-data train subset; val/test rows are returned unchanged.

    Binary tasks are first balanced (all positives plus an equal number of
    negatives). Then each class keeps the first ``round(fraction * n_c)`` rows
    of a seed-fixed priority order, so smaller fractions are always subsets of
    larger ones.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    train = dataset.split_rows("train")
    y = dataset.labels[train]
    rank = _priority(len(dataset), seed)[train]
    classes = np.unique(y)
    if len(classes) < 2:
        raise PreconditionError("train split holds a single class")

    per_class = {c: train[y == c][np.argsort(rank[y == c], kind="stable")] for c in classes}
    if len(classes) == 2:
        n_min = min(len(v) for v in per_class.values())
        per_class = {c: v[:n_min] for c, v in per_class.items()}

    keep = []
    for c, rows in per_class.items():
        k = int(round(fraction * len(rows)))
        if k < 2:
            raise PreconditionError(
                f"fraction {fraction} leaves {k} training samples for class {c} (need >= 2)"
            )
        keep.append(rows[:k])
    keep = np.sort(np.concatenate(keep))
    others = np.flatnonzero(dataset.splits != "train")
    return dataset.take(np.concatenate([keep, others]))


def morphometric_names(schema: TabularSchema) -> list[str]:
    return [f.name for f in schema if f.morphometric]


def non_morphometric_names(schema: TabularSchema) -> list[str]:
    return [f.name for f in schema if not f.morphometric]


def split_counts(dataset: PairedDataset) -> dict[str, int]:
    return {s: int((dataset.splits == s).sum()) for s in SPLITS}

