"""Contrastive objectives over L2-normalised projections.

All losses are sums over anchors divided by the batch size N.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch

from mmcl.errors import ConfigError, ContractError, DegenerateBatchError

UNIT_TOL = 1e-3


@dataclass
class LossConfig:
    temperature: float = 0.1
    lam: float = 0.5
    denominator_mode: str = "clip_inclusive"  # or "literal_eq2": positive excluded from denominator
    supervision: str = "none"  # "none" | "fn_elimination" | "supcon"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.denominator_mode not in ("clip_inclusive", "literal_eq2"):
            raise ConfigError(f"unknown denominator_mode {self.denominator_mode!r}")
        if self.supervision not in ("none", "fn_elimination", "supcon"):
            raise ConfigError(f"unknown supervision {self.supervision!r}")

    @property
    def needs_labels(self) -> bool:
        return self.supervision != "none"


class ClipLoss(NamedTuple):
    total: torch.Tensor
    l_it: torch.Tensor
    l_ti: torch.Tensor


def _check(z_a: torch.Tensor, z_b: torch.Tensor) -> int:
    if z_a.ndim != 2 or z_a.shape != z_b.shape:
        raise ContractError(f"projection shapes differ: {tuple(z_a.shape)} vs {tuple(z_b.shape)}")
    n = z_a.shape[0]
    if n < 2:
        raise ContractError("contrastive losses need N >= 2")
    with torch.no_grad():
        for z in (z_a, z_b):
            dev = (z.norm(dim=1) - 1).abs().max().item()
            if dev > UNIT_TOL:
                raise ContractError(f"projection rows are not unit norm (max deviation {dev:.2e})")
    return n


def fn_elimination_mask(labels) -> torch.Tensor:
    """mask[j, k] is False iff k != j and labels match (a false negative)."""
    y = torch.as_tensor(labels).reshape(-1)
    same = y[:, None] == y[None, :]
    eye = torch.eye(len(y), dtype=torch.bool)
    return ~same | eye


def _directional(logits: torch.Tensor, denom_mask: torch.Tensor) -> torch.Tensor:
    """Sum over anchors j of -(logit_jj - logsumexp_{k in mask_j} logit_jk)."""
    if not denom_mask.any(dim=1).all():
        raise DegenerateBatchError("an anchor has an empty denominator")
    masked = logits.masked_fill(~denom_mask, float("-inf"))
    return -(logits.diagonal() - torch.logsumexp(masked, dim=1)).sum()


def clip_loss(z_i: torch.Tensor, z_t: torch.Tensor, cfg: LossConfig | None = None,
              labels=None) -> ClipLoss:
    """Cross-modal loss: image anchors against tabular candidates and back.

    Only cross-modal similarities enter. With ``cfg.supervision ==
    "fn_elimination"`` same-class negatives are dropped from denominators.
    """
    cfg = cfg or LossConfig()
    n = _check(z_i, z_t)
    logits = z_i @ z_t.T / cfg.temperature
    mask = torch.ones(n, n, dtype=torch.bool)
    if cfg.supervision == "fn_elimination":
        if labels is None:
            raise ConfigError("fn_elimination needs labels")
        mask = fn_elimination_mask(labels)
    if cfg.denominator_mode == "literal_eq2":
        mask = mask & ~torch.eye(n, dtype=torch.bool)
    l_it = _directional(logits, mask) / n
    l_ti = _directional(logits.T, mask.T) / n
    return ClipLoss(cfg.lam * l_it + (1 - cfg.lam) * l_ti, l_it, l_ti)


def ntxent_loss(z_a: torch.Tensor, z_b: torch.Tensor, temperature: float = 0.1) -> torch.Tensor:
    """NT-Xent over 2N views; each view's positive is its partner, all other
    2N - 2 views are negatives. Mean over the 2N anchors."""
    n = _check(z_a, z_b)
    z = torch.cat([z_a, z_b])
    logits = z @ z.T / temperature
    logits = logits.masked_fill(torch.eye(2 * n, dtype=torch.bool), float("-inf"))
    pos = torch.cat([torch.arange(n, 2 * n), torch.arange(n)])
    return (torch.logsumexp(logits, dim=1) - logits[torch.arange(2 * n), pos]).mean()


def _supcon_direction(logits: torch.Tensor, pos: torch.Tensor) -> torch.Tensor:
    log_prob = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    per_anchor = -(log_prob * pos).sum(1) / pos.sum(1)
    return per_anchor.sum()


def supcon_loss(z_i: torch.Tensor, z_t: torch.Tensor, labels, temperature: float = 0.1) -> torch.Tensor:
    """Cross-modal supervised contrastive loss.

    For an image anchor every tabular projection with the same label is a
    positive (its own pair included). Per anchor: mean over positives of
    -log softmax; summed over anchors in both directions, halved, / N.
    """
    n = _check(z_i, z_t)
    y = torch.as_tensor(labels).reshape(-1)
    if len(y) != n:
        raise ContractError(f"{len(y)} labels for a batch of {n}")
    if len(torch.unique(y)) < 2:
        raise DegenerateBatchError("supcon batch contains a single class")
    pos = (y[:, None] == y[None, :]).to(z_i.dtype)
    logits = z_i @ z_t.T / temperature
    return 0.5 * (_supcon_direction(logits, pos) + _supcon_direction(logits.T, pos.T)) / n


def multimodal_loss(z_i, z_t, cfg: LossConfig, labels=None) -> ClipLoss:
    """Dispatch on ``cfg.supervision``; SupCon reports the total in both slots."""
    if cfg.supervision == "supcon":
        if labels is None:
            raise ConfigError("supcon needs labels")
        total = supcon_loss(z_i, z_t, labels, cfg.temperature)
        return ClipLoss(total, total, total)
    return clip_loss(z_i, z_t, cfg, labels)
