"""Semantic-guided spatial attention: one category-specific feature per class.

Pipeline per category c and spatial position (w, h):
  fused   = P^T tanh((U^T f_wh) * (V^T x_c)) + b        low-rank bilinear fusion
  logit   = att(fused)                                   scalar relevance
  a       = softmax over positions                       normalized attention
  pooled  = sum_wh a_wh * f_wh                           attention pooling
  feature = proj(pooled)                                 match text dimension
"""

from __future__ import annotations

import torch
import torch.nn as nn


class SemanticDecoupling(nn.Module):
    """Trainable decoupling head over a frozen global feature map.

    Args:
        num_channels: channel count of the visual feature map.
        semantic_dim: dimension of the semantic word vectors.
        joint_dim: low-rank bilinear joint dimension (d_j = d_f).
        text_dim: output dimension, matching the text embeddings.
    """

    def __init__(
        self,
        num_channels: int,
        semantic_dim: int,
        joint_dim: int = 1024,
        text_dim: int = 512,
        seed: int = 0,
    ):
        super().__init__()
        self.num_channels = num_channels
        self.semantic_dim = semantic_dim
        self.joint_dim = joint_dim
        self.text_dim = text_dim
        gen = torch.Generator().manual_seed(seed)

        def uniform(shape, fan_in):
            bound = (1.0 / fan_in) ** 0.5
            return (torch.rand(shape, generator=gen) * 2 - 1) * bound

        self.U = nn.Parameter(uniform((num_channels, joint_dim), num_channels))
        self.V = nn.Parameter(uniform((semantic_dim, joint_dim), semantic_dim))
        self.P = nn.Parameter(uniform((joint_dim, joint_dim), joint_dim))
        self.b = nn.Parameter(torch.zeros(joint_dim))
        self.att = nn.Linear(joint_dim, 1)
        self.proj = nn.Linear(num_channels, text_dim)
        with torch.no_grad():
            self.att.weight.copy_(uniform(self.att.weight.shape, joint_dim))
            self.att.bias.zero_()
            self.proj.weight.copy_(uniform(self.proj.weight.shape, num_channels))
            self.proj.bias.zero_()

    def fuse_bilinear(self, fmap_flat: torch.Tensor, semantics: torch.Tensor) -> torch.Tensor:
        """(..., P, N_ch) x (C, D) -> fused (..., C, P, d_j)."""
        u = fmap_flat @ self.U.to(fmap_flat.dtype)  # (..., P, d_j)
        v = semantics @ self.V.to(semantics.dtype)  # (C, d_j)
        joint = torch.tanh(u.unsqueeze(-3) * v.unsqueeze(-2))
        return joint @ self.P.to(joint.dtype) + self.b.to(joint.dtype)

    def attention_logits(self, fused: torch.Tensor) -> torch.Tensor:
        """Apply the d_j -> 1 map at every (category, position)."""
        w = self.att.weight.to(fused.dtype)
        b = self.att.bias.to(fused.dtype)
        return torch.nn.functional.linear(fused, w, b).squeeze(-1)

    @staticmethod
    def normalize_attention(logits: torch.Tensor) -> torch.Tensor:
        """Per-category spatial softmax over the last dimension (positions)."""
        return torch.softmax(logits, dim=-1)

    @staticmethod
    def attention_pool(fmap_flat: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
        """(..., P, N_ch) weighted by (..., C, P) -> pooled (..., C, N_ch)."""
        return attention @ fmap_flat

    def forward(
        self, fmap: torch.Tensor, semantics: torch.Tensor, return_attention: bool = False
    ):
        """Decouple a feature map into per-category features.

        Args:
            fmap: (N_ch, H, W) or (B, N_ch, H, W) visual feature map.
            semantics: (C, D) semantic word vectors.

        Returns:
            features (B?, C, text_dim), and the (B?, C, H, W) attention map if
            requested.
        """
        if semantics.ndim != 2 or semantics.shape[1] != self.semantic_dim:
            raise ValueError(f"semantics must be (C, {self.semantic_dim})")
        squeeze = fmap.ndim == 3
        if squeeze:
            fmap = fmap.unsqueeze(0)
        if fmap.shape[1] != self.num_channels:
            raise ValueError(f"feature map has {fmap.shape[1]} channels, expected {self.num_channels}")
        b, _, h, w = fmap.shape
        flat = fmap.flatten(2).transpose(1, 2)  # (B, P, N_ch)
        fused = self.fuse_bilinear(flat, semantics)
        attention = self.normalize_attention(self.attention_logits(fused))  # (B, C, P)
        pooled = self.attention_pool(flat, attention)
        features = torch.nn.functional.linear(
            pooled, self.proj.weight.to(pooled.dtype), self.proj.bias.to(pooled.dtype)
        )
        if squeeze:
            features = features.squeeze(0)
            attention = attention.squeeze(0)
        if return_attention:
            return features, attention.reshape(*attention.shape[:-1], h, w)
        return features

    def parameter_count(self) -> dict[str, int]:
        return {name: p.numel() for name, p in self.named_parameters()}
