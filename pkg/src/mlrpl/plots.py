"""Figure rendering: attention heat-map overlays and cross-proportion curves.

All figures are written to files (Agg backend); nothing is shown interactively.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.cm as cm
import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

DEFAULT_ALPHA = 0.5


def upsample_attention(attention: np.ndarray | torch.Tensor, size: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling of a (h, w) attention map to (H, W), rescaled to [0, 1]."""
    att = torch.as_tensor(np.asarray(attention), dtype=torch.float32)[None, None]
    up = F.interpolate(att, size=size, mode="bilinear", align_corners=False)[0, 0].numpy()
    lo, hi = up.min(), up.max()
    return (up - lo) / (hi - lo) if hi > lo else np.zeros_like(up)


def overlay_heatmap(image: np.ndarray, attention: np.ndarray | torch.Tensor,
                    alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Alpha-blend a jet-colored attention map over an RGB image.

    `image` is (3, H, W) or (H, W, 3) float in [0, 1]; returns (H, W, 3) uint8.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 3:
        img = img.transpose(1, 2, 0)
    heat = upsample_attention(attention, img.shape[:2])
    colored = cm.jet(heat)[..., :3]
    blended = (1 - alpha) * img + alpha * colored
    return np.clip(blended * 255.0 + 0.5, 0, 255).astype(np.uint8)


def save_cam_overlays(image: np.ndarray, attention_maps, category_names: list[str],
                      scores: np.ndarray, top_k: int, out_dir: str | Path,
                      alpha: float = DEFAULT_ALPHA) -> list[Path]:
    """Write one overlay PNG per top-k category; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = np.argsort(-np.asarray(scores), kind="stable")[:top_k]
    paths = []
    for rank, c in enumerate(order):
        overlay = overlay_heatmap(image, attention_maps[c], alpha)
        path = out_dir / f"cam_{rank:02d}_{category_names[c]}.png"
        Image.fromarray(overlay).save(path)
        paths.append(path)
    return paths


def plot_proportion_curves(summary: dict, path: str | Path) -> None:
    """mAP / OF1 / CF1 versus known-label proportion, with the overall average."""
    rows = summary["rows"]
    props = [r["proportion"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("mAP", "OF1", "CF1"):
        means = [r[key]["mean"] for r in rows]
        stds = [r[key]["std"] for r in rows]
        ax.errorbar(props, means, yerr=stds, marker="o", capsize=3,
                    label=f"{key} (avg {summary['average'][key]:.3f})")
    ax.set_xlabel("known label proportion")
    ax.set_ylabel("metric")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_curve(records: list[dict], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r["epoch"] for r in records], [r["loss"] for r in records])
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
