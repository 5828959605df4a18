"""Per-category learnable prompt sequences composed with fixed class tokens.

Each category owns M independent continuous token vectors followed by the
frozen embedding of its class name; only the M learnable tokens receive
gradients.
"""

from __future__ import annotations

import torch
import torch.nn as nn

PROMPT_INIT_STD = 0.02


class PromptBank(nn.Module):
    """C independent prompt sequences of M learnable tokens + one class token."""

    def __init__(self, category_names: list[str], prompt_length: int, dim: int,
                 text_encoder, seed: int = 0):
        super().__init__()
        if prompt_length < 1:
            raise ValueError("prompt length must be >= 1")
        if not category_names:
            raise ValueError("need at least one category")
        self.category_names = list(category_names)
        self.prompt_length = prompt_length
        self.dim = dim
        c = len(category_names)
        gen = torch.Generator().manual_seed(seed)
        self.tokens = nn.Parameter(
            torch.randn(c, prompt_length, dim, generator=gen) * PROMPT_INIT_STD
        )
        cls = torch.stack([text_encoder.token_embedding(n) for n in category_names])
        self.register_buffer("cls_embeddings", cls)

    @property
    def num_categories(self) -> int:
        return self.tokens.shape[0]

    def compose_prompt(self, c: int) -> torch.Tensor:
        """Sequence (M+1, dim) for category c, class token last."""
        if not 0 <= c < self.num_categories:
            raise IndexError(f"category index {c} out of range")
        return torch.cat([self.tokens[c], self.cls_embeddings[c : c + 1].to(self.tokens.dtype)])

    def compose_all(self) -> torch.Tensor:
        """All sequences stacked, shape (C, M+1, dim)."""
        return torch.cat([self.tokens, self.cls_embeddings.unsqueeze(1).to(self.tokens.dtype)], dim=1)

    def encode_all(self, text_encoder) -> torch.Tensor:
        """Per-category text embeddings (C, dim), one batched encoder pass."""
        return text_encoder.encode(self.compose_all())
