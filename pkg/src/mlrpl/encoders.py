"""Frozen visual/text encoder backends and semantic word embeddings.

Two interchangeable backends: a pretrained vision-language stack (ResNet-101
visual tower with modified final pooling, weights loaded from disk) and a
deterministic synthetic pair small enough for second-scale tests. Encoder
weights are never updated; gradients flow only through their inputs.
"""

from __future__ import annotations

import hashlib
import logging
import os
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

log = logging.getLogger(__name__)

WEIGHTS_ENV_VAR = "MLRPL_WEIGHTS"


def _freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def encoder_checksum(module: nn.Module) -> str:
    """Hash of all parameter and buffer bytes; used to assert frozen weights."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _hashed_vector(word: str, dim: int, scale: float = 1.0) -> np.ndarray:
    """Deterministic stand-in embedding for out-of-vocabulary words."""
    seed = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim) * scale


class WordEmbeddings:
    """Semantic word vectors in the whitespace-separated "word v1 ... vD" format.

    Multi-word category names average their constituent word vectors;
    out-of-vocabulary words fall back to a deterministic hashed vector.
    With no embedding file every word is hashed (synthetic mode).
    """

    def __init__(self, path: str | Path | None = None, dim: int = 300):
        self.dim = dim
        self.vectors: dict[str, np.ndarray] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise FileNotFoundError(f"word embedding file not found: {path}")
            with open(path) as f:
                for line in f:
                    parts = line.rstrip().split(" ")
                    if len(parts) < 2:
                        continue
                    vec = np.asarray(parts[1:], dtype=np.float64)
                    if self.vectors and vec.shape[0] != self.dim:
                        raise ValueError(f"inconsistent embedding dimension in {path}")
                    self.dim = vec.shape[0]
                    self.vectors[parts[0]] = vec

    def get(self, name: str) -> np.ndarray:
        if not name:
            raise ValueError("category name must be nonempty")
        words = name.replace("_", " ").split()
        vecs = []
        for w in words:
            vec = self.vectors.get(w.lower())
            if vec is None:
                vec = _hashed_vector(w.lower(), self.dim)
                if self.vectors:
                    log.warning("word %r not in embedding vocabulary, using hashed fallback", w)
            vecs.append(vec)
        return np.mean(vecs, axis=0)

    def matrix(self, names: list[str]) -> torch.Tensor:
        return torch.tensor(np.stack([self.get(n) for n in names]), dtype=torch.float32)


class SyntheticVisualEncoder(nn.Module):
    """Frozen fixed-seed conv stack: 3 stride-2 stages, 56x56x3 -> 64x7x7."""

    def __init__(self, input_size: int = 56, seed: int = 0):
        super().__init__()
        self.input_size = input_size
        self.num_channels = 64
        gen = torch.Generator().manual_seed(seed)
        layers = []
        chans = [3, 16, 32, 64]
        for cin, cout in zip(chans, chans[1:]):
            conv = nn.Conv2d(cin, cout, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.3)
                conv.bias.zero_()
            layers += [conv, nn.Tanh()]
        self.stack = nn.Sequential(*layers)
        _freeze(self)

    @property
    def feature_hw(self) -> int:
        return self.input_size // 8

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Images (B, 3, S, S) -> feature maps (B, 64, S/8, S/8). No silent resize."""
        if images.ndim == 3:
            images = images.unsqueeze(0)
        if images.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected {self.input_size}x{self.input_size} input, got {tuple(images.shape[-2:])}"
            )
        return self.stack(images)

    forward = encode


class SyntheticTextEncoder(nn.Module):
    """Frozen affine + tanh over mean-pooled token vectors; differentiable in tokens."""

    def __init__(self, dim: int = 512, seed: int = 1):
        super().__init__()
        self.dim = dim
        gen = torch.Generator().manual_seed(seed)
        self.weight = nn.Parameter(torch.randn(dim, dim, generator=gen) / dim**0.5)
        self.bias = nn.Parameter(torch.randn(dim, generator=gen) * 0.01)
        _freeze(self)

    def token_embedding(self, name: str) -> torch.Tensor:
        """Embedding of the category-name token (first word for multi-word names)."""
        words = name.replace("_", " ").split()
        if not words:
            raise ValueError("category name must be nonempty")
        if len(words) > 1:
            log.info("multi-word class name %r: using first token for the class embedding", name)
        vec = _hashed_vector("tok:" + words[0].lower(), self.dim, scale=0.02)
        return torch.tensor(vec, dtype=self.weight.dtype)

    def encode(self, tokens: torch.Tensor) -> torch.Tensor:
        """Token sequences (..., L, dim) -> embeddings (..., dim)."""
        if tokens.shape[-1] != self.dim:
            raise ValueError(f"token dimension {tokens.shape[-1]} != encoder dimension {self.dim}")
        pooled = tokens.mean(dim=-2)
        return torch.tanh(pooled @ self.weight.T.to(pooled.dtype) + self.bias.to(pooled.dtype))

    forward = encode


class PretrainedVisualEncoder(nn.Module):
    """Frozen ResNet-101 tower with the final global pool replaced by 2x2/s2
    average pooling, so 448x448 inputs yield 2048x7x7 feature maps.

    Weights are loaded from a state-dict file; no downloads.
    """

    IMAGENET_MEAN = (0.48145466, 0.4578275, 0.40821073)
    IMAGENET_STD = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, weights_path: str | Path | None = None, input_size: int = 448):
        super().__init__()
        weights_path = weights_path or os.environ.get(WEIGHTS_ENV_VAR)
        if not weights_path or not Path(weights_path).exists():
            raise FileNotFoundError(
                "pretrained backend weights unavailable; set the weights path in the "
                f"config or the {WEIGHTS_ENV_VAR} environment variable"
            )
        from torchvision.models import resnet101

        self.input_size = input_size
        self.num_channels = 2048
        backbone = resnet101()
        state = torch.load(weights_path, map_location="cpu")
        backbone.load_state_dict(state, strict=False)
        # keep the conv trunk; swap the global pool for 2x2 stride-2 averaging
        self.trunk = nn.Sequential(*list(backbone.children())[:-2])
        self.pool = nn.AvgPool2d(kernel_size=2, stride=2)
        _freeze(self)

    @property
    def feature_hw(self) -> int:
        return self.input_size // 64

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim == 3:
            images = images.unsqueeze(0)
        if images.shape[-2:] != (self.input_size, self.input_size):
            raise ValueError(
                f"expected {self.input_size}x{self.input_size} input, got {tuple(images.shape[-2:])}"
            )
        with torch.no_grad():
            return self.pool(self.trunk(images))

    forward = encode


def build_visual_encoder(backend: str, **kwargs) -> nn.Module:
    if backend == "synthetic":
        return SyntheticVisualEncoder(**kwargs)
    if backend == "pretrained":
        return PretrainedVisualEncoder(**kwargs)
    raise ValueError(f"unknown encoder backend {backend!r}")
