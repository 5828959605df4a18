"""Temperature-scaled category scoring and partial-label losses.

Scores couple per-category visual and text features by cosine similarity and
a softmax over categories. Losses evaluate only annotated entries (y != 0):
the partial asymmetric loss applies focusing exponents and a negative-margin
shift, the partial BCE ablation rescales plain BCE by the known-label rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch

LOG_FLOOR = 1e-12


@dataclass
class LossConfig:
    gamma_pos: float = 1.0
    gamma_neg: float = 2.0
    margin: float = 0.05
    temperature: float = 0.07
    variant: str = "p_asl"

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0:
            raise ValueError("focusing exponents must be >= 0")
        if not (0.0 <= self.margin < 1.0):
            raise ValueError("margin must be in [0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.variant not in ("p_asl", "p_bce"):
            raise ValueError(f"unknown loss variant {self.variant!r}")
        if self.gamma_neg < self.gamma_pos:
            warnings.warn("gamma_neg < gamma_pos weakens easy-negative down-weighting")


def cosine_similarities(vfeats: torch.Tensor, tfeats: torch.Tensor) -> torch.Tensor:
    """Per-category cosine similarity between (..., C, d) visual and (C, d) text features."""
    vn = vfeats.norm(dim=-1)
    tn = tfeats.norm(dim=-1)
    if (vn == 0).any() or (tn == 0).any():
        raise ValueError("zero-norm feature vector: cosine similarity undefined")
    return (vfeats * tfeats).sum(dim=-1) / (vn * tn)


def predict_scores(vfeats: torch.Tensor, tfeats: torch.Tensor, temperature: float) -> torch.Tensor:
    """Softmax over categories of cosine similarities scaled by 1/temperature."""
    return torch.softmax(cosine_similarities(vfeats, tfeats) / temperature, dim=-1)


def pasl_term(p: float, y: int, cfg: LossConfig) -> float:
    """Single-entry partial asymmetric loss term (pre-negation, as summed in the objective)."""
    if y == 0:
        return 0.0
    if y == 1:
        return (1.0 - p) ** cfg.gamma_pos * math.log(max(p, LOG_FLOOR))
    p_shift = max(p - cfg.margin, 0.0)
    return p_shift**cfg.gamma_neg * math.log(max(1.0 - p_shift, LOG_FLOOR))


def pbce_term(p: float, y: int, known_fraction: float) -> float:
    """Single-entry partial BCE term, scaled by the inverse known-label rate."""
    if known_fraction <= 0:
        raise ValueError("known_fraction must be positive")
    if y == 0:
        return 0.0
    inner = math.log(max(p, LOG_FLOOR)) if y == 1 else math.log(max(1.0 - p, LOG_FLOOR))
    return inner / known_fraction


def total_loss(scores: torch.Tensor, labels: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Objective over a batch: negative mean over samples of summed per-category terms.

    `scores` is (B, C) in (0, 1); `labels` is (B, C) in {-1, 0, +1}. Unlabeled
    entries contribute exactly zero, so the loss depends only on annotated
    entries. Differentiable in `scores`.
    """
    if scores.shape != labels.shape:
        raise ValueError(f"scores {tuple(scores.shape)} and labels {tuple(labels.shape)} disagree")
    if scores.ndim == 1:
        scores = scores.unsqueeze(0)
        labels = labels.unsqueeze(0)
    pos = labels == 1
    neg = labels == -1
    p = scores
    zero = torch.zeros((), dtype=scores.dtype, device=scores.device)
    if cfg.variant == "p_asl":
        pos_terms = (1 - p) ** cfg.gamma_pos * torch.log(p.clamp(min=LOG_FLOOR))
        p_shift = (p - cfg.margin).clamp(min=0.0)
        neg_terms = p_shift**cfg.gamma_neg * torch.log((1 - p_shift).clamp(min=LOG_FLOOR))
    else:
        known_fraction = (pos | neg).float().mean().item()
        if known_fraction == 0:
            warnings.warn("batch has no annotated labels; loss is zero")
            return zero.clone()
        pos_terms = torch.log(p.clamp(min=LOG_FLOOR)) / known_fraction
        neg_terms = torch.log((1 - p).clamp(min=LOG_FLOOR)) / known_fraction
    terms = torch.where(pos, pos_terms, zero) + torch.where(neg, neg_terms, zero)
    return -terms.sum() / scores.shape[0]
