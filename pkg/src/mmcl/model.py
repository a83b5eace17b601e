"""Encoders, projection heads and the downstream linear head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from mmcl.errors import ConfigError, ContractError

NORM_FLOOR = 1e-12


@dataclass
class ModelConfig:
    image_arch: str = "conv"  # "conv" (desk scale) or "resnet50"
    image_channels: tuple[int, ...] = (32, 64, 128)
    in_channels: int = 3
    embedding_dim: int = 256  # image embedding width
    tabular_hidden: int = 256
    tabular_embedding: int = 256
    projection_dim: int = 64
    tabular_head_bias: bool = False

    @classmethod
    def paper_scale(cls, **kw) -> "ModelConfig":
        base = dict(image_arch="resnet50", embedding_dim=2048, tabular_hidden=2048,
                    tabular_embedding=2048, projection_dim=128)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_channels"] = list(self.image_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "image_channels" in d:
            d["image_channels"] = tuple(d["image_channels"])
        return cls(**d)


def fan_in_uniform_(module: nn.Module) -> None:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.uniform_(m.bias, -bound, bound)


class TabularEncoder(nn.Module):
    """MLP with a single hidden layer: in -> hidden -> ReLU -> embedding."""

    def __init__(self, in_dim: int, hidden: int = 256, embedding: int = 256):
        super().__init__()
        self.in_dim, self.hidden, self.embedding_dim = in_dim, hidden, embedding
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, embedding))
        fan_in_uniform_(self)

    @staticmethod
    def n_params(in_dim: int, hidden: int, embedding: int) -> int:
        return in_dim * hidden + hidden + hidden * embedding + embedding

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ContractError(f"tabular encoder expects width {self.in_dim}, got {x.shape[-1]}")
        return self.net(x)


class ConvEncoder(nn.Module):
    """Small conv trunk: one 3x3 conv + ReLU per stage, global average pool.

    The first ``len(channels)`` stages downsample by 2; the final stage maps to
    ``embedding`` channels at stride 1.
    """

    def __init__(self, in_channels: int = 3, channels=(32, 64, 128), embedding: int = 256):
        super().__init__()
        self.in_channels, self.embedding_dim = in_channels, embedding
        self.channels = tuple(channels)
        layers, c = [], in_channels
        for out in self.channels:
            layers += [nn.Conv2d(c, out, 3, stride=2, padding=1), nn.ReLU()]
            c = out
        layers += [nn.Conv2d(c, embedding, 3, stride=1, padding=1), nn.ReLU()]
        self.trunk = nn.Sequential(*layers)
        fan_in_uniform_(self)

    @staticmethod
    def n_params(in_channels: int, channels, embedding: int) -> int:
        total, c = 0, in_channels
        for out in (*channels, embedding):
            total += c * out * 9 + out
            c = out
        return total

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ContractError(
                f"image encoder expects N x {self.in_channels} x H x W, got {tuple(x.shape)}"
            )
        return self.trunk(x).mean(dim=(2, 3))


class ResNetEncoder(nn.Module):
    """Randomly initialised ResNet-50 trunk (2048-d embedding)."""

    def __init__(self, in_channels: int = 3):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        if in_channels != 3:
            net.conv1 = nn.Conv2d(in_channels, 64, 7, 2, 3, bias=False)
        net.fc = nn.Identity()
        self.net, self.in_channels, self.embedding_dim = net, in_channels, 2048

    def forward(self, x):
        return self.net(x)


def build_image_encoder(cfg: ModelConfig) -> nn.Module:
    if cfg.image_arch == "conv":
        return ConvEncoder(cfg.in_channels, cfg.image_channels, cfg.embedding_dim)
    if cfg.image_arch == "resnet50":
        if cfg.embedding_dim != 2048:
            raise ConfigError("resnet50 produces 2048-d embeddings")
        return ResNetEncoder(cfg.in_channels)
    raise ConfigError(f"unknown image_arch {cfg.image_arch!r}")


class ImageProjectionHead(nn.Module):
    """embedding -> hidden (= embedding width) -> ReLU -> projection."""

    def __init__(self, embedding: int, out: int = 128):
        super().__init__()
        self.in_dim, self.out_dim = embedding, out
        self.net = nn.Sequential(nn.Linear(embedding, embedding), nn.ReLU(), nn.Linear(embedding, out))
        fan_in_uniform_(self)

    def forward(self, h):
        return self.net(h)


class TabularProjectionHead(nn.Module):
    """A single affine map (bias-free unless requested)."""

    def __init__(self, embedding: int, out: int = 128, bias: bool = False):
        super().__init__()
        self.in_dim, self.out_dim = embedding, out
        self.net = nn.Linear(embedding, out, bias=bias)
        fan_in_uniform_(self)

    def forward(self, h):
        return self.net(h)


def l2_normalize(z: torch.Tensor) -> torch.Tensor:
    return z / z.norm(dim=-1, keepdim=True).clamp_min(NORM_FLOOR)


def project(embeddings: torch.Tensor, head: nn.Module) -> torch.Tensor:
    """Apply a projection head and put every row on the unit sphere."""
    if embeddings.shape[-1] != head.in_dim:
        raise ContractError(f"head expects width {head.in_dim}, got {embeddings.shape[-1]}")
    return l2_normalize(head(embeddings))


class LinearClassifier(nn.Module):
    def __init__(self, embedding: int, n_classes: int):
        super().__init__()
        self.in_dim, self.n_classes = embedding, n_classes
        self.fc = nn.Linear(embedding, n_classes)
        fan_in_uniform_(self)

    def forward(self, h):
        return self.fc(h)


def classify(embeddings: torch.Tensor, head: LinearClassifier) -> torch.Tensor:
    if embeddings.shape[-1] != head.in_dim:
        raise ContractError(f"classifier expects width {head.in_dim}, got {embeddings.shape[-1]}")
    return head(embeddings)


class ContrastiveModel(nn.Module):
    """Both towers plus projection heads; unused towers are simply absent.

    mode "multimodal": image + tabular; "simclr": image only; "scarf": tabular only.
    """

    def __init__(self, cfg: ModelConfig, tabular_in: int | None, mode: str = "multimodal"):
        super().__init__()
        self.cfg, self.mode, self.tabular_in = cfg, mode, tabular_in
        self.image_encoder = self.image_head = None
        self.tabular_encoder = self.tabular_head = None
        if mode in ("multimodal", "simclr"):
            self.image_encoder = build_image_encoder(cfg)
            self.image_head = ImageProjectionHead(self.image_encoder.embedding_dim, cfg.projection_dim)
        if mode in ("multimodal", "scarf"):
            if tabular_in is None:
                raise ConfigError(f"mode {mode!r} needs the tabular input width")
            self.tabular_encoder = TabularEncoder(tabular_in, cfg.tabular_hidden, cfg.tabular_embedding)
            self.tabular_head = TabularProjectionHead(
                cfg.tabular_embedding, cfg.projection_dim, cfg.tabular_head_bias
            )
        if mode not in ("multimodal", "simclr", "scarf"):
            raise ConfigError(f"unknown pretraining mode {mode!r}")

    def project_images(self, x):
        return project(self.image_encoder(x), self.image_head)

    def project_tabular(self, x):
        return project(self.tabular_encoder(x), self.tabular_head)

    def encoder(self, modality: str) -> nn.Module:
        enc = self.image_encoder if modality == "image" else self.tabular_encoder
        if enc is None:
            raise ConfigError(f"model pretrained in mode {self.mode!r} has no {modality} encoder")
        return enc
