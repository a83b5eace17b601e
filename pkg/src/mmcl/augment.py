"""Stochastic views: image augmentation policies and tabular corruption."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from mmcl.errors import ConfigError

# --- tabular corruption ------------------------------------------------------


@dataclass
class CorruptionSampler:
    """Replaces a fraction of raw features with draws from their training marginals.

    ``marginals[j]`` is the multiset of observed training values of feature j.
    ``exempt`` lists feature indices that are never corrupted.
    """

    rate: float
    marginals: list[np.ndarray]
    mode: str = "fixed"  # "fixed": exactly ceil(rate * F) features; "bernoulli": each w.p. rate
    exempt: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"corruption rate must lie in [0, 1], got {self.rate}")
        if self.mode not in ("fixed", "bernoulli"):
            raise ConfigError(f"unknown corruption mode {self.mode!r}")
        for j, m in enumerate(self.marginals):
            if len(m) == 0:
                raise ConfigError(f"feature {j} has an empty marginal")
        self.marginals = [np.asarray(m, dtype=np.float64) for m in self.marginals]
        self._eligible = np.array(
            [j for j in range(len(self.marginals)) if j not in set(self.exempt)], dtype=np.int64
        )

    @classmethod
    def from_matrix(cls, values: np.ndarray, missing_mask: np.ndarray, rate: float, **kw):
        """Build marginals from (train-split) rows, skipping missing entries."""
        marginals = [values[~missing_mask[:, j], j] for j in range(values.shape[1])]
        return cls(rate, marginals, **kw)

    @property
    def n_features(self) -> int:
        return len(self.marginals)

    @property
    def n_corrupt(self) -> int:
        return int(math.ceil(self.rate * len(self._eligible) - 1e-9))

    def choose(self, n_rows: int, rng: np.random.Generator) -> np.ndarray:
        """Boolean N x F selection of features to corrupt."""
        sel = np.zeros((n_rows, self.n_features), dtype=bool)
        if len(self._eligible) == 0:
            return sel
        if self.mode == "bernoulli":
            sel[:, self._eligible] = rng.random((n_rows, len(self._eligible))) < self.rate
            return sel
        k = self.n_corrupt
        if k == 0:
            return sel
        # first k of a random permutation per row = uniform k-subset without replacement
        picks = np.argsort(rng.random((n_rows, len(self._eligible))), axis=1)[:, :k]
        rows = np.repeat(np.arange(n_rows), k)
        sel[rows, self._eligible[picks.ravel()]] = True
        return sel


def corrupt_batch(
    rows: np.ndarray, sampler: CorruptionSampler, rng: np.random.Generator,
    return_mask: bool = False,
):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != sampler.n_features:
        raise ValueError(f"rows have {rows.shape[-1]} features, sampler expects {sampler.n_features}")
    sel = sampler.choose(len(rows), rng)
    out = rows.copy()
    for j in np.flatnonzero(sel.any(axis=0)):
        hit = np.flatnonzero(sel[:, j])
        marg = sampler.marginals[j]
        out[hit, j] = marg[rng.integers(0, len(marg), len(hit))]
    return (out, sel) if return_mask else out


def corrupt(row: np.ndarray, sampler: CorruptionSampler, rng: np.random.Generator) -> np.ndarray:
    return corrupt_batch(np.asarray(row)[None], sampler, rng)[0]


# --- image policies ----------------------------------------------------------

KNOWN_TRANSFORMS = {
    "RandomHorizontalFlip": (),
    "RandomRotation": ("degrees",),
    "ColorJitter": ("brightness", "contrast", "saturation"),
    "RandomResizedCrop": ("scale",),
    "RandomGrayscale": (),
    "GaussianBlur": ("kernel_size", "sigma"),
}
_OPTIONAL = {"RandomResizedCrop": ("size", "ratio")}


@dataclass
class Transform:
    name: str
    p: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in KNOWN_TRANSFORMS:
            raise ConfigError(f"unknown transform {self.name!r}")
        missing = set(KNOWN_TRANSFORMS[self.name]) - set(self.params)
        if missing:
            raise ConfigError(f"{self.name}: missing parameters {sorted(missing)}")
        extra = set(self.params) - set(KNOWN_TRANSFORMS[self.name]) - set(_OPTIONAL.get(self.name, ()))
        if extra:
            raise ConfigError(f"{self.name}: unknown parameters {sorted(extra)}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"{self.name}: probability must be in [0, 1]")


@dataclass
class ImagePolicy:
    transforms: list[Transform]
    apply_probability: float = 0.95
    output_size: int = 128

    def to_dict(self) -> dict:
        return {
            "apply_probability": self.apply_probability,
            "output_size": self.output_size,
            "transforms": [{"name": t.name, "p": t.p, **t.params} for t in self.transforms],
        }

    @classmethod
    def from_config(cls, d) -> "ImagePolicy":
        """Accepts a preset name ("cardiac", "dvm"), ``{"preset": name,
        "output_size": s}`` or a full policy mapping."""
        if isinstance(d, str):
            d = {"preset": d}
        if "preset" in d:
            extra = set(d) - {"preset", "output_size", "apply_probability"}
            if extra or d["preset"] not in POLICIES:
                raise ConfigError(f"bad policy preset spec {d}")
            pol = POLICIES[d["preset"]](int(d.get("output_size", 128)))
            pol.apply_probability = float(d.get("apply_probability", pol.apply_probability))
            return pol
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ImagePolicy":
        unknown = set(d) - {"apply_probability", "output_size", "transforms"}
        if unknown:
            raise ConfigError(f"unknown policy keys {sorted(unknown)}")
        ts = []
        for t in d.get("transforms", []):
            t = dict(t)
            name, p = t.pop("name"), float(t.pop("p", 1.0))
            t = {k: tuple(v) if isinstance(v, list) else v for k, v in t.items()}
            ts.append(Transform(name, p, t))
        return cls(ts, float(d.get("apply_probability", 0.95)), int(d.get("output_size", 128)))


def cardiac_policy(output_size: int = 128) -> ImagePolicy:
    return ImagePolicy(
        [
            Transform("RandomHorizontalFlip", 0.5),
            Transform("RandomRotation", 1.0, {"degrees": 45}),
            Transform("ColorJitter", 1.0, {"brightness": 0.5, "contrast": 0.5, "saturation": 0.5}),
            Transform("RandomResizedCrop", 1.0, {"size": output_size, "scale": (0.2, 1.0)}),
        ],
        apply_probability=0.95,
        output_size=output_size,
    )


def dvm_policy(output_size: int = 128) -> ImagePolicy:
    return ImagePolicy(
        [
            Transform("ColorJitter", 0.8, {"brightness": 0.8, "contrast": 0.8, "saturation": 0.8}),
            Transform("RandomGrayscale", 0.2),
            Transform("GaussianBlur", 0.5, {"kernel_size": 29, "sigma": (0.1, 2.0)}),
            Transform("RandomResizedCrop", 1.0, {"size": output_size, "scale": (0.08, 1.0)}),
            Transform("RandomHorizontalFlip", 0.5),
        ],
        apply_probability=0.95,
        output_size=output_size,
    )


POLICIES = {"cardiac": cardiac_policy, "dvm": dvm_policy}


def resize(images: torch.Tensor, size: int) -> torch.Tensor:
    if images.shape[-2:] == (size, size):
        return images
    return F.interpolate(images, size=(size, size), mode="bilinear", align_corners=False,
                         antialias=True)


def _gray(images: torch.Tensor) -> torch.Tensor:
    if images.shape[1] == 1:
        return images
    w = images.new_tensor([0.299, 0.587, 0.114])[: images.shape[1]]
    return (images * w[None, :, None, None]).sum(1, keepdim=True) / w.sum()


def _crop_box(h: int, w: int, scale, ratio, rng: np.random.Generator):
    area = h * w
    log_r = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        ar = math.exp(rng.uniform(*log_r))
        cw = int(round(math.sqrt(target * ar)))
        ch = int(round(math.sqrt(target / ar)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # center-crop fallback
    in_ratio = w / h
    if in_ratio < ratio[0]:
        cw, ch = w, int(round(w / ratio[0]))
    elif in_ratio > ratio[1]:
        ch, cw = h, int(round(h * ratio[1]))
    else:
        cw, ch = w, h
    return (h - ch) // 2, (w - cw) // 2, ch, cw


def _resized_crop(images, boxes, size):
    n, _, h, w = images.shape
    u = (torch.arange(size, dtype=images.dtype) + 0.5) / size
    b = torch.as_tensor(boxes, dtype=images.dtype)  # top, left, ch, cw
    ys = b[:, 0:1] + u[None] * b[:, 2:3]
    xs = b[:, 1:2] + u[None] * b[:, 3:4]
    gy = (2 * ys / h - 1)[:, :, None].expand(n, size, size)
    gx = (2 * xs / w - 1)[:, None, :].expand(n, size, size)
    grid = torch.stack([gx, gy], dim=-1)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="border", align_corners=False)


def _rotate(images, angles_deg):
    a = torch.as_tensor(np.deg2rad(angles_deg), dtype=images.dtype)
    c, s = torch.cos(a), torch.sin(a)
    z = torch.zeros_like(a)
    theta = torch.stack([torch.stack([c, -s, z], 1), torch.stack([s, c, z], 1)], 1)
    grid = F.affine_grid(theta, list(images.shape), align_corners=False)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def _blur(images, sigmas, kernel_size):
    n, c, h, w = images.shape
    k = min(kernel_size, 2 * ((min(h, w) - 1) // 2) + 1)
    r = k // 2
    x = torch.arange(-r, r + 1, dtype=images.dtype)
    sig = torch.as_tensor(sigmas, dtype=images.dtype)[:, None]
    ker = torch.exp(-0.5 * (x[None] / sig) ** 2)
    ker = ker / ker.sum(1, keepdim=True)
    ker = ker.repeat_interleave(c, 0)  # (n*c, k)
    flat = images.reshape(1, n * c, h, w)
    flat = F.pad(flat, (r, r, r, r), mode="reflect")
    flat = F.conv2d(flat, ker[:, None, :, None], groups=n * c)
    flat = F.conv2d(flat, ker[:, None, None, :], groups=n * c)
    return flat.reshape(n, c, h, w)


def augment_batch(images, policy: ImagePolicy, rng: np.random.Generator) -> torch.Tensor:
    """Augment N images at once; each sample gets independent random draws.

    With probability ``1 - apply_probability`` a sample is only resized.
    Random numbers are consumed identically whether or not a transform fires,
    so the stream depends only on N and the policy.
    """
    x = torch.as_tensor(images, dtype=torch.float32).clone()
    n = x.shape[0]
    gate = rng.random(n) < policy.apply_probability
    size = policy.output_size
    for t in policy.transforms:
        on = gate & (rng.random(n) < t.p)
        idx = torch.as_tensor(np.flatnonzero(on))
        if t.name == "RandomHorizontalFlip":
            if len(idx):
                x[idx] = torch.flip(x[idx], dims=[-1])
        elif t.name == "RandomRotation":
            deg = float(t.params["degrees"])
            angles = rng.uniform(-deg, deg, n)
            if len(idx):
                x[idx] = _rotate(x[idx], angles[on])
        elif t.name == "ColorJitter":
            fac = {
                k: rng.uniform(1 - t.params[k], 1 + t.params[k], n)
                for k in ("brightness", "contrast", "saturation")
            }
            if len(idx):
                y = x[idx]
                f = lambda k: torch.as_tensor(fac[k][on], dtype=y.dtype)[:, None, None, None]
                y = (y * f("brightness")).clamp(0, 1)
                m = _gray(y).mean(dim=(1, 2, 3), keepdim=True)
                y = ((y - m) * f("contrast") + m).clamp(0, 1)
                g = _gray(y)
                y = ((y - g) * f("saturation") + g).clamp(0, 1)
                x[idx] = y
        elif t.name == "RandomGrayscale":
            if len(idx):
                x[idx] = _gray(x[idx]).expand_as(x[idx])
        elif t.name == "GaussianBlur":
            lo, hi = t.params["sigma"]
            sig = rng.uniform(lo, hi, n)
            if len(idx):
                x[idx] = _blur(x[idx], sig[on], int(t.params["kernel_size"]))
        elif t.name == "RandomResizedCrop":
            h, w = x.shape[-2:]
            ratio = t.params.get("ratio", (3 / 4, 4 / 3))
            boxes = [_crop_box(h, w, t.params["scale"], ratio, rng) for _ in range(n)]
            if on.all():
                x = _resized_crop(x, boxes, size)
            else:
                out = resize(x, size).clone()
                if len(idx):
                    out[idx] = _resized_crop(x[idx], [boxes[i] for i in np.flatnonzero(on)], size)
                x = out
    return resize(x, size).clamp(0.0, 1.0)


def augment_image(image, policy: ImagePolicy, rng: np.random.Generator) -> np.ndarray:
    """Augment a single C x H x W image."""
    return augment_batch(np.asarray(image)[None], policy, rng)[0].numpy()


def eval_transform(images, size: int) -> torch.Tensor:
    """Validation/test path: resize only."""
    return resize(torch.as_tensor(images, dtype=torch.float32), size).clamp(0.0, 1.0)
