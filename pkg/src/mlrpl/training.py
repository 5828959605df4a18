"""End-to-end training: frozen encoders, SGD over prompts + decoupling head.

Only the semantic decoupling parameters and the learnable prompt tokens are
optimized. The schedule is a constant warm-up learning rate for the first
epoch(s) followed by cosine annealing. Since the visual encoder is frozen,
feature maps are computed once per dataset and cached across epochs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .data import DatasetIndex
from .decoupling import SemanticDecoupling
from .encoders import SyntheticTextEncoder, SyntheticVisualEncoder, WordEmbeddings, encoder_checksum
from .losses import LossConfig, predict_scores, total_loss
from .metrics import MetricsReport, build_report
from .prompts import PromptBank

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    lr: float = 0.002
    warmup_lr: float = 0.0005
    warmup_epochs: int = 1
    epochs: int = 100
    batch_size: int = 64
    input_size: int = 448
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    encoder_backend: str = "synthetic"
    momentum: float = 0.9
    eval_every: int = 5

    def __post_init__(self):
        if self.lr <= 0 or self.warmup_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be in [0, epochs)")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate for an epoch: constant warm-up, then cosine annealing."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.warmup_lr
    t = epoch - cfg.warmup_epochs
    span = cfg.epochs - cfg.warmup_epochs
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


class RecognitionModel(nn.Module):
    """Frozen encoder pair + trainable decoupling head and prompt bank."""

    def __init__(self, visual_encoder, text_encoder, decoupling: SemanticDecoupling,
                 prompts: PromptBank, semantics: torch.Tensor, temperature: float):
        super().__init__()
        self.visual_encoder = visual_encoder
        self.text_encoder = text_encoder
        self.decoupling = decoupling
        self.prompts = prompts
        self.register_buffer("semantics", semantics)
        self.temperature = temperature

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Exactly the prompt tokens plus every decoupling tensor."""
        params = [self.prompts.tokens] + list(self.decoupling.parameters())
        expected = {id(p) for p in params}
        actual = {id(p) for p in self.parameters() if p.requires_grad}
        assert expected == actual, "trainable set must be prompts + decoupling only"
        return params

    def scores_from_features(self, fmaps: torch.Tensor, return_attention: bool = False):
        out = self.decoupling(fmaps, self.semantics.to(fmaps.dtype), return_attention)
        vfeats, attention = out if return_attention else (out, None)
        tfeats = self.prompts.encode_all(self.text_encoder)
        scores = predict_scores(vfeats, tfeats, self.temperature)
        return (scores, attention) if return_attention else scores

    def forward(self, images: torch.Tensor, return_attention: bool = False):
        fmaps = self.visual_encoder.encode(images)
        return self.scores_from_features(fmaps, return_attention)


def build_synthetic_model(category_names: list[str], semantic_dim: int = 300,
                          text_dim: int = 512, joint_dim: int = 64,
                          prompt_length: int = 16, input_size: int = 56,
                          temperature: float = 0.07, seed: int = 0,
                          embeddings: WordEmbeddings | None = None) -> RecognitionModel:
    """Desk-scale model on the deterministic synthetic backends."""
    visual = SyntheticVisualEncoder(input_size=input_size, seed=seed)
    text = SyntheticTextEncoder(dim=text_dim, seed=seed + 1)
    embeddings = embeddings or WordEmbeddings(dim=semantic_dim)
    semantics = embeddings.matrix(category_names)
    decoupling = SemanticDecoupling(visual.num_channels, semantic_dim,
                                    joint_dim=joint_dim, text_dim=text_dim, seed=seed + 2)
    prompts = PromptBank(category_names, prompt_length, text_dim, text, seed=seed + 3)
    return RecognitionModel(visual, text, decoupling, prompts, semantics, temperature)


def train_step(model: RecognitionModel, fmaps: torch.Tensor, labels: torch.Tensor,
               optimizer: torch.optim.Optimizer, cfg: TrainConfig) -> float:
    """One forward/backward/SGD update on cached feature maps."""
    optimizer.zero_grad()
    scores = model.scores_from_features(fmaps)
    loss = total_loss(scores, labels, cfg.loss)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss.item()}")
    loss.backward()
    optimizer.step()
    return float(loss.item())


def train(dataset: DatasetIndex, images: np.ndarray | torch.Tensor, model: RecognitionModel,
          cfg: TrainConfig, eval_dataset: DatasetIndex | None = None,
          log_records: list | None = None) -> list[dict]:
    """Run the full schedule; returns one log record per epoch.

    `images` must match the visual backend's input size. `eval_dataset`, when
    given, must be fully annotated; validation metrics are computed every
    `cfg.eval_every` epochs on the training images.
    """
    if not (dataset.labels != 0).any():
        raise ValueError("dataset has no known labels")
    torch.manual_seed(cfg.seed)
    images = torch.as_tensor(images, dtype=torch.float32)
    labels = torch.tensor(np.array(dataset.labels), dtype=torch.int64)
    with torch.no_grad():
        fmaps = model.visual_encoder.encode(images)  # frozen, cache once
    optimizer = torch.optim.SGD(model.trainable_parameters(), lr=cfg.lr, momentum=cfg.momentum)
    order_rng = np.random.default_rng(cfg.seed)
    records = log_records if log_records is not None else []
    n = len(dataset.image_refs)
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        perm = order_rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            losses.append(train_step(model, fmaps[idx], labels[idx], optimizer, cfg))
        record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses))}
        if eval_dataset is not None and (epoch + 1) % cfg.eval_every == 0:
            with torch.no_grad():
                scores = model.scores_from_features(fmaps).numpy()
            report = build_report(scores, np.asarray(eval_dataset.labels),
                                  meta={"epoch": epoch, "seed": cfg.seed})
            record["metrics"] = {"mAP": report.mAP, "OF1": report.OF1, "CF1": report.CF1}
        records.append(record)
        log.info("epoch %d lr %.5g loss %.5g", epoch, lr, record["loss"])
    return records


def evaluate(model: RecognitionModel, dataset: DatasetIndex,
             images: np.ndarray | torch.Tensor, policy: str = "top_k",
             threshold: float | None = None, top_k: int = 3,
             meta: dict | None = None, batch_size: int = 64) -> MetricsReport:
    """Full-dataset inference against a fully annotated test set."""
    if not dataset.is_fully_annotated():
        raise ValueError("evaluation requires a fully annotated dataset")
    if dataset.category_names != model.prompts.category_names:
        raise ValueError("dataset and checkpoint category lists disagree")
    images = torch.as_tensor(images, dtype=torch.float32)
    chunks = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunks.append(model(images[start : start + batch_size]).numpy())
    scores = np.concatenate(chunks)
    return build_report(scores, np.asarray(dataset.labels), policy=policy,
                        threshold=threshold, top_k=top_k, meta=meta)


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, model: RecognitionModel, cfg: TrainConfig, epoch: int,
                    optimizer: torch.optim.Optimizer | None = None) -> None:
    """Single-file archive of trainable state + metadata; no encoder weights."""
    payload = {
        "prompt_tokens": model.prompts.tokens.detach().clone(),
        "cls_embeddings": model.prompts.cls_embeddings.detach().clone(),
        "decoupling": model.decoupling.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "meta": {
            "epoch": epoch,
            "config_hash": config_hash(cfg),
            "config": asdict(cfg),
            "category_names": model.prompts.category_names,
            "encoder_checksums": {
                "visual": encoder_checksum(model.visual_encoder),
                "text": encoder_checksum(model.text_encoder),
            },
        },
    }
    torch.save(payload, path)


def load_checkpoint(path, model: RecognitionModel) -> dict:
    """Restore trainable state into `model`; returns checkpoint metadata."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    names = payload["meta"]["category_names"]
    if names != model.prompts.category_names:
        raise ValueError(
            f"checkpoint categories {names} do not match model {model.prompts.category_names}"
        )
    with torch.no_grad():
        model.prompts.tokens.copy_(payload["prompt_tokens"])
        model.prompts.cls_embeddings.copy_(payload["cls_embeddings"])
    model.decoupling.load_state_dict(payload["decoupling"])
    return payload["meta"]


def trainable_parameter_breakdown(model: RecognitionModel) -> dict[str, int]:
    """Named count of every trainable tensor, plus the total."""
    counts = {"prompts.tokens": model.prompts.tokens.numel()}
    for name, p in model.decoupling.named_parameters():
        counts[f"decoupling.{name}"] = p.numel()
    counts["total"] = sum(counts.values())
    return counts
