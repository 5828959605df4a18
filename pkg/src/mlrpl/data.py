"""Dataset representation, annotation loading and partial-label mask generation.

Label vectors are integer arrays over C categories with values in {-1, 0, +1}
(negative / unknown / positive). Fully annotated datasets contain no zeros;
masking replaces a seeded random subset of entries with 0.
"""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VALID_MASK_MODES = ("per_image", "global")


def _check_label_matrix(rows: np.ndarray) -> None:
    if rows.ndim != 2:
        raise ValueError(f"label matrix must be 2-D, got shape {rows.shape}")
    bad = ~np.isin(rows, (-1, 0, 1))
    if bad.any():
        raise ValueError("label entries must be -1, 0 or +1")


@dataclass(frozen=True)
class DatasetIndex:
    """Ordered image references with per-image label vectors over C categories."""

    image_refs: list[str]
    labels: np.ndarray  # (N, C) int8, entries in {-1, 0, +1}
    category_names: list[str]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        _check_label_matrix(labels)
        if len(self.image_refs) != labels.shape[0]:
            raise ValueError("image_refs and labels disagree on sample count")
        if labels.shape[1] != len(self.category_names):
            raise ValueError("labels and category_names disagree on C")
        if len(set(self.category_names)) != len(self.category_names):
            raise ValueError("category names must be unique")
        if any(not name for name in self.category_names):
            raise ValueError("category names must be nonempty")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def num_images(self) -> int:
        return self.labels.shape[0]

    @property
    def num_categories(self) -> int:
        return self.labels.shape[1]

    def is_fully_annotated(self) -> bool:
        return not (self.labels == 0).any()

    def known_fraction(self) -> float:
        return float((self.labels != 0).mean())

    def with_labels(self, labels: np.ndarray) -> "DatasetIndex":
        return DatasetIndex(list(self.image_refs), labels, list(self.category_names))


@dataclass(frozen=True)
class MaskSpec:
    """Partial-label masking protocol: keep `proportion` of labels, drop the rest."""

    proportion: float
    seed: int
    mode: str = "per_image"

    def __post_init__(self):
        if not (0.0 < self.proportion <= 1.0):
            raise ValueError(f"proportion must be in (0, 1], got {self.proportion}")
        if self.mode not in VALID_MASK_MODES:
            raise ValueError(f"mode must be one of {VALID_MASK_MODES}, got {self.mode!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def apply_partial_mask(full: DatasetIndex, spec: MaskSpec) -> DatasetIndex:
    """Drop a seeded random subset of labels, keeping `spec.proportion` of them.

    per_image mode keeps exactly round(proportion * C) entries in every row;
    global mode keeps round(proportion * N * C) entries dataset-wide. Masked
    entries become 0; kept entries are untouched. Deterministic in (full, spec).
    """
    if not full.is_fully_annotated():
        raise ValueError("apply_partial_mask requires a fully annotated dataset")
    n, c = full.labels.shape
    rng = np.random.default_rng(spec.seed)
    masked = np.zeros_like(full.labels)
    if spec.mode == "per_image":
        keep = _round_half_up(spec.proportion * c)
        for i in range(n):
            cols = rng.choice(c, size=keep, replace=False)
            masked[i, cols] = full.labels[i, cols]
    else:
        keep = _round_half_up(spec.proportion * n * c)
        flat_idx = rng.choice(n * c, size=keep, replace=False)
        flat = masked.reshape(-1)
        flat[flat_idx] = full.labels.reshape(-1)[flat_idx]
    return full.with_labels(masked)


def save_mask_manifest(dataset: DatasetIndex, spec: MaskSpec, path: str | Path) -> None:
    """Write the masked label matrix as a JSON manifest."""
    payload = {
        "proportion": spec.proportion,
        "seed": spec.seed,
        "mode": spec.mode,
        "rows": dataset.labels.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_mask_manifest(path: str | Path) -> tuple[MaskSpec, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    spec = MaskSpec(payload["proportion"], payload["seed"], payload["mode"])
    rows = np.asarray(payload["rows"], dtype=np.int8)
    _check_label_matrix(rows)
    return spec, rows


def load_dataset(
    path: str | Path,
    format: str,
    category_names: list[str] | None = None,
) -> DatasetIndex:
    """Load a fully annotated multi-label dataset index.

    Supported formats: "coco_json" (COCO instance annotations, presence derived
    from the instance list), "voc_xml" (a directory of per-image annotation
    XMLs) and "synthetic_manifest" (this package's own JSON manifest).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path does not exist: {path}")
    if format == "coco_json":
        return _load_coco_json(path, category_names)
    if format == "voc_xml":
        return _load_voc_xml(path, category_names)
    if format == "synthetic_manifest":
        return _load_synthetic_manifest(path, category_names)
    raise ValueError(f"unknown dataset format {format!r}")


def _check_categories(names: list[str], expected: list[str] | None) -> None:
    if expected is not None and names != list(expected):
        raise ValueError(
            f"category list mismatch: dataset has {names}, config expects {list(expected)}"
        )


def _load_coco_json(path: Path, expected: list[str] | None) -> DatasetIndex:
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed COCO annotation file {path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in payload:
            raise ValueError(f"COCO annotation file missing {key!r} section")
    if not payload["images"]:
        raise ValueError(f"COCO annotation file {path} lists no images")
    cats = sorted(payload["categories"], key=lambda c: c["id"])
    names = [c["name"] for c in cats]
    _check_categories(names, expected)
    cat_col = {c["id"]: i for i, c in enumerate(cats)}
    image_ids = [img["id"] for img in payload["images"]]
    refs = [img.get("file_name", str(img["id"])) for img in payload["images"]]
    row_of = {img_id: i for i, img_id in enumerate(image_ids)}
    labels = -np.ones((len(refs), len(names)), dtype=np.int8)
    for ann in payload["annotations"]:
        try:
            labels[row_of[ann["image_id"]], cat_col[ann["category_id"]]] = 1
        except KeyError as exc:
            raise ValueError(f"annotation references unknown id: {exc}") from exc
    return DatasetIndex(refs, labels, names)


def _load_voc_xml(path: Path, expected: list[str] | None) -> DatasetIndex:
    if not path.is_dir():
        raise ValueError("voc_xml format expects a directory of annotation XMLs")
    files = sorted(path.glob("*.xml"))
    if not files:
        raise ValueError(f"no annotation XMLs found in {path}")
    per_image: list[tuple[str, set[str]]] = []
    seen: set[str] = set()
    for f in files:
        try:
            root = ET.parse(f).getroot()
        except ET.ParseError as exc:
            raise ValueError(f"malformed annotation XML {f}: {exc}") from exc
        fname = root.findtext("filename") or f.stem
        objects = {obj.findtext("name") or "" for obj in root.iter("object")}
        if "" in objects:
            raise ValueError(f"object without a name in {f}")
        per_image.append((fname, objects))
        seen |= objects
    names = list(expected) if expected is not None else sorted(seen)
    unknown = seen - set(names)
    if unknown:
        raise ValueError(f"annotations name categories outside the config list: {sorted(unknown)}")
    col = {name: i for i, name in enumerate(names)}
    labels = -np.ones((len(per_image), len(names)), dtype=np.int8)
    for i, (_, objects) in enumerate(per_image):
        for name in objects:
            labels[i, col[name]] = 1
    return DatasetIndex([ref for ref, _ in per_image], labels, names)


def _load_synthetic_manifest(path: Path, expected: list[str] | None) -> DatasetIndex:
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed synthetic manifest {path}: {exc}") from exc
    names = payload.get("category_names")
    samples = payload.get("samples")
    if not names or not samples:
        raise ValueError("synthetic manifest needs nonempty category_names and samples")
    _check_categories(names, expected)
    refs = [s["image"] for s in samples]
    labels = np.asarray([s["labels"] for s in samples], dtype=np.int8)
    if (labels == 0).any():
        raise ValueError("synthetic manifest labels must be fully annotated")
    return DatasetIndex(refs, labels, names)


def save_synthetic_manifest(dataset: DatasetIndex, path: str | Path) -> None:
    payload = {
        "category_names": dataset.category_names,
        "samples": [
            {"image": ref, "labels": row.tolist()}
            for ref, row in zip(dataset.image_refs, dataset.labels)
        ],
    }
    Path(path).write_text(json.dumps(payload))


def make_synthetic_dataset(
    num_images: int,
    num_categories: int,
    seed: int,
    avg_positives: float = 3.0,
    image_size: int = 56,
) -> tuple[DatasetIndex, np.ndarray]:
    """Generate a deterministic toy dataset with category-correlated patches.

    Each category owns a fixed grid cell and color; present categories paint
    their cell over a noise background, so even a frozen random encoder sees a
    learnable signal. Returns the index and float32 images (N, 3, S, S) in [0, 1].
    """
    if num_images < 1:
        raise ValueError("num_images must be >= 1")
    if num_categories < 2:
        raise ValueError("need at least 2 categories")
    rng = np.random.default_rng(seed)
    c = num_categories
    p_pos = min(avg_positives / c, 1.0)
    labels = np.where(rng.random((num_images, c)) < p_pos, 1, -1).astype(np.int8)
    # fixed per-category palette and grid placement
    colors = rng.random((c, 3)) * 0.8 + 0.2
    grid = math.ceil(math.sqrt(c))
    cell = image_size // grid
    images = rng.random((num_images, 3, image_size, image_size)).astype(np.float32) * 0.25
    for i in range(num_images):
        for cat in np.flatnonzero(labels[i] == 1):
            r, col = divmod(int(cat), grid)
            y0, x0 = r * cell, col * cell
            patch = colors[cat][:, None, None] + rng.normal(0, 0.05, (3, cell, cell))
            images[i, :, y0 : y0 + cell, x0 : x0 + cell] = patch
    np.clip(images, 0.0, 1.0, out=images)
    refs = [f"synthetic://{seed}/{i}" for i in range(num_images)]
    return DatasetIndex(refs, labels, [f"cat{j:02d}" for j in range(c)]), images
