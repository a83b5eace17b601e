"""Synthetic paired dataset: rendered shapes plus measurements taken from them.

Each class has a shape family (ellipse / rectangle) and class-conditional
size, aspect, rotation and intensity. Morphometric columns are measured from
the rendered pixels, so they are recomputable from the image alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mmcl.data.dataset import PairedDataset
from mmcl.data.schema import FeatureSpec, TabularSchema
from mmcl.data.tabular import TabularMatrix
from mmcl.errors import ConfigError

FOREGROUND_THRESHOLD = 0.4  # background <= 0.3 < threshold < 0.47 <= foreground
AREA_SCALE = 0.1
N_SITE_CODES = 4
MORPHOMETRIC = ("area", "bbox_width", "bbox_height", "aspect_ratio", "perimeter")


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int = 2000
    n_classes: int = 10
    image_size: int = 32
    n_noise_features: int = 10
    label_noise_rate: float = 0.0
    seed: int = 0
    channels: int = 3

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")
        if not 0.0 <= self.label_noise_rate <= 1.0:
            raise ConfigError("label_noise_rate must lie in [0, 1]")
        if self.n_samples < 20:
            raise ConfigError("n_samples must be >= 20")
        if self.n_noise_features < 0:
            raise ConfigError("n_noise_features must be >= 0")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")


def synthetic_schema(n_noise_features: int) -> TabularSchema:
    feats = [FeatureSpec(name, "continuous", morphometric=True) for name in MORPHOMETRIC]
    feats.append(FeatureSpec("site", "categorical", tuple(range(N_SITE_CODES))))
    feats += [FeatureSpec(f"noise_{k}", "continuous") for k in range(n_noise_features)]
    return TabularSchema(tuple(feats))


def foreground_mask(image: np.ndarray) -> np.ndarray:
    return image.max(axis=0) > FOREGROUND_THRESHOLD


def measure(mask: np.ndarray) -> np.ndarray:
    """Morphometric measurements of one binary mask, in MORPHOMETRIC order."""
    ys, xs = np.nonzero(mask)
    area = mask.sum() * AREA_SCALE
    width = float(xs.max() - xs.min() + 1)
    height = float(ys.max() - ys.min() + 1)
    padded = np.pad(mask, 1)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    perimeter = float((mask & ~interior).sum())
    return np.array([area, width, height, width / height, perimeter])


def _class_prototypes(n_classes: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    n_sizes = (n_classes + 1) // 2
    sizes = np.linspace(0.16, 0.40, n_sizes) if n_sizes > 1 else np.array([0.28])
    c = np.arange(n_classes)
    return {
        "family": c % 2,
        "size": sizes[c // 2],
        "aspect": rng.uniform(0.45, 0.95, n_classes),
        "rotation": rng.uniform(0.0, np.pi, n_classes),
        "intensity": rng.uniform(0.6, 0.9, n_classes),
    }


def render_shape(
    size: int, family: int, radius: float, aspect: float, angle: float,
    center: tuple[float, float],
) -> np.ndarray:
    """Binary mask of a filled ellipse (family 0) or rectangle (family 1)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dx, dy = xx - center[0], yy - center[1]
    u = dx * np.cos(angle) + dy * np.sin(angle)
    v = -dx * np.sin(angle) + dy * np.cos(angle)
    a, b = radius, radius * aspect
    if family == 0:
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    # rectangles are shrunk so both families cover similar areas
    a, b = 0.85 * a, 0.85 * b
    return (np.abs(u) <= a) & (np.abs(v) <= b)


def generate_synthetic(config: SyntheticConfig) -> PairedDataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, s, k = config.n_samples, config.image_size, config.n_classes
    proto = _class_prototypes(k, rng)

    classes = rng.integers(0, k, n)
    images = np.empty((n, config.channels, s, s), dtype=np.float32)
    morph = np.empty((n, len(MORPHOMETRIC)))
    for i, c in enumerate(classes):
        radius = s * proto["size"][c] * (1 + 0.07 * rng.standard_normal())
        radius = float(np.clip(radius, 2.5, 0.45 * s))
        aspect = float(np.clip(proto["aspect"][c] + 0.06 * rng.standard_normal(), 0.3, 1.0))
        angle = float(proto["rotation"][c] + 0.25 * rng.standard_normal())
        intensity = float(np.clip(proto["intensity"][c] + 0.04 * rng.standard_normal(), 0.5, 1.0))
        margin = radius
        center = tuple(rng.uniform(margin, s - margin, 2)) if margin < s / 2 else (s / 2, s / 2)
        mask = render_shape(s, int(proto["family"][c]), radius, aspect, angle, center)
        if not mask.any():
            mask[int(center[1]), int(center[0])] = True

        tint = rng.uniform(0.6, 1.0, config.channels)
        tint /= tint.max()
        img = rng.uniform(0.0, 0.3, (config.channels, s, s))
        fg = intensity * tint[:, None, None] + rng.uniform(-0.03, 0.03, (config.channels, s, s))
        fg[tint.argmax()] = np.maximum(fg[tint.argmax()], 0.47)
        img = np.where(mask[None], np.clip(fg, 0.0, 1.0), img)
        images[i] = img.astype(np.float32)
        morph[i] = measure(foreground_mask(images[i]))

    site = np.where(
        rng.random(n) < 0.6, classes % N_SITE_CODES, rng.integers(0, N_SITE_CODES, n)
    )
    noise_scale = rng.uniform(0.5, 5.0, config.n_noise_features)
    noise_loc = rng.uniform(-10.0, 10.0, config.n_noise_features)
    noise = noise_loc + noise_scale * rng.standard_normal((n, config.n_noise_features))
    values = np.column_stack([morph, site.astype(np.float64), noise])

    labels = classes.copy()
    flip = rng.random(n) < config.label_noise_rate
    # a flipped label is drawn uniformly from the other classes
    labels[flip] = (classes[flip] + rng.integers(1, k, flip.sum())) % k

    order = rng.permutation(n)
    n_train, n_val = int(round(0.70 * n)), int(round(0.15 * n))
    splits = np.empty(n, dtype="<U5")
    splits[order[:n_train]] = "train"
    splits[order[n_train:n_train + n_val]] = "val"
    splits[order[n_train + n_val:]] = "test"

    schema = synthetic_schema(config.n_noise_features)
    tab = TabularMatrix(values, np.zeros_like(values, dtype=bool))
    return PairedDataset(images, tab, labels, splits, schema)
