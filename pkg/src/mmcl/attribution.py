"""Integrated-gradients attribution for the tabular encoder."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.func import jacfwd, vmap

from mmcl.checkpoint import Checkpoint
from mmcl.data.dataset import PairedDataset
from mmcl.data.schema import TabularSchema
from mmcl.errors import NumericError, SchemaError


def integrated_gradients_batch(
    encoder, samples, baseline=None, steps: int = 64, max_points: int = 2048
) -> np.ndarray:
    """IG for each row of ``samples`` (M x F'); returns M x F' x E.

    Right Riemann sum over ``steps`` points of the straight path from
    ``baseline`` (default: zero vector) to the sample. Jacobians are taken in
    forward mode (F' is far smaller than E) over at most ``max_points`` path
    points at a time.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(np.asarray(samples)).to(dtype)
    if x.ndim == 1:
        x = x[None]
    b = torch.zeros_like(x[0]) if baseline is None else torch.as_tensor(np.asarray(baseline), dtype=dtype)
    alphas = torch.arange(1, steps + 1, dtype=dtype) / steps
    jac = vmap(jacfwd(lambda v: encoder(v[None])[0]))
    out = []
    for i in range(len(x)):
        delta = x[i] - b
        path = b + alphas[:, None] * delta[None, :]  # (steps, F')
        total = None
        for start in range(0, steps, max_points):
            with torch.no_grad():
                g = jac(path[start:start + max_points])  # (k, E, F')
            if not torch.isfinite(g).all():
                s = start + int(torch.nonzero(~torch.isfinite(g))[0][0])
                raise NumericError(f"non-finite gradient for sample {i} at path position {(s + 1) / steps:.4f}")
            part = g.sum(dim=0)
            total = part if total is None else total + part
        out.append(((total / steps) * delta[None, :]).T.numpy())  # (F', E)
    return np.stack(out)


def integrated_gradients(encoder, sample, baseline=None, steps: int = 64) -> np.ndarray:
    """F' x E attribution matrix for a single encoded row."""
    return integrated_gradients_batch(encoder, np.asarray(sample)[None], baseline, steps)[0]


def completeness_residual(encoder, sample, attributions, baseline=None) -> np.ndarray:
    """sum_f IG_f(d) - (enc(x)_d - enc(baseline)_d) for every embedding dim d."""
    dtype = next(encoder.parameters()).dtype
    x = torch.as_tensor(np.asarray(sample), dtype=dtype)[None]
    b = torch.zeros_like(x) if baseline is None else torch.as_tensor(np.asarray(baseline), dtype=dtype)[None]
    with torch.no_grad():
        diff = (encoder(x) - encoder(b))[0].numpy()
    return np.asarray(attributions).sum(axis=0) - diff


@dataclass
class AttributionReport:
    features: list[str]
    importance: np.ndarray  # per raw feature, schema order
    morphometric: np.ndarray  # bool flags
    n_samples: int

    @property
    def ranking(self) -> list[str]:
        order = np.argsort(-self.importance, kind="stable")
        return [self.features[i] for i in order]

    def rank_of(self, name: str) -> int:
        return self.ranking.index(name) + 1

    @property
    def morphometric_share(self) -> float:
        total = self.importance.sum()
        return float(self.importance[self.morphometric].sum() / total) if total > 0 else 0.0

    @property
    def non_morphometric_share(self) -> float:
        total = self.importance.sum()
        return float(self.importance[~self.morphometric].sum() / total) if total > 0 else 0.0

    def to_csv(self, path: str | Path) -> None:
        lines = ["feature,importance,rank,morphometric"]
        for name in self.ranking:
            j = self.features.index(name)
            lines.append(f"{name},{self.importance[j]!r},{self.rank_of(name)},{bool(self.morphometric[j])}")
        Path(path).write_text("\n".join(lines) + "\n")

    def plot(self, path: str | Path, top: int = 20) -> None:
        """Horizontal bars, most important at the top; morphometric in orange."""
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        names = self.ranking[:top][::-1]
        vals = [self.importance[self.features.index(n)] for n in names]
        cols = ["tab:orange" if self.morphometric[self.features.index(n)] else "tab:blue" for n in names]
        fig, ax = plt.subplots(figsize=(6, 0.3 * len(names) + 1))
        ax.barh(names, vals, color=cols)
        ax.set_xlabel("mean |integrated gradient|")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def aggregate_importance(attributions: np.ndarray, schema: TabularSchema) -> AttributionReport:
    """Per sample mean |IG| over embedding dims, one-hot blocks summed into
    their parent feature, then averaged over samples."""
    attributions = np.asarray(attributions)
    if attributions.ndim == 2:
        attributions = attributions[None]
    if attributions.shape[1] != schema.encoded_width:
        raise SchemaError(
            f"attributions have {attributions.shape[1]} columns, schema encodes {schema.encoded_width}"
        )
    per_col = np.abs(attributions).mean(axis=2)  # (M, F')
    per_feat = np.stack([per_col[:, sl].sum(axis=1) for sl in schema.encoded_slices()], axis=1)
    return AttributionReport(
        features=schema.names,
        importance=per_feat.mean(axis=0),
        morphometric=np.array([f.morphometric for f in schema.features]),
        n_samples=len(attributions),
    )


def attribute(
    ckpt: Checkpoint, dataset: PairedDataset, steps: int = 64, max_samples: int = 2048,
    seed: int = 0, split: str = "test",
) -> AttributionReport:
    """Attribute the checkpoint's tabular encoder over (a seeded subsample of) a split."""
    from mmcl.evaluation import _tabular_inputs

    ckpt.check_compatible(dataset)
    ds = dataset.split(split)
    if len(ds) > max_samples:
        keep = np.sort(np.random.default_rng(seed).choice(len(ds), max_samples, replace=False))
        ds = ds.take(keep)
    x = _tabular_inputs(ckpt, ds)
    encoder = ckpt.model.encoder("tabular")
    encoder.eval()
    ig = integrated_gradients_batch(encoder, x, steps=steps)
    return aggregate_importance(ig, ckpt.schema)
