"""Command-line entry points: mask, train, eval, cam, report.

Exit codes: 0 success, 2 bad arguments/config, 3 I/O failure, 4 non-finite
loss abort, 5 category mismatch. Every command writes a run manifest into its
output location before producing artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ConfigError, RunConfig, load_run_config
from .data import (
    DatasetIndex,
    MaskSpec,
    apply_partial_mask,
    load_dataset,
    load_mask_manifest,
    make_synthetic_dataset,
    save_mask_manifest,
)
from .encoders import WordEmbeddings
from .metrics import build_report, write_csv, write_json
from .plots import plot_loss_curve, plot_proportion_curves, save_cam_overlays
from .training import (
    RecognitionModel,
    TrainingDiverged,
    build_synthetic_model,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    trainable_parameter_breakdown,
)
from .metrics import MetricsReport, aggregate_reports, read_json

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_CATEGORY_MISMATCH = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def write_manifest(out_dir: Path, command: str, args: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: str(v) for k, v in args.items() if v is not None},
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _build_dataset(cfg: RunConfig):
    """Returns (full DatasetIndex, images array, masked DatasetIndex or None)."""
    data = cfg.data
    if data.get("synthetic") is not None:
        syn = dict(data["synthetic"])
        dataset, images = make_synthetic_dataset(
            syn["num_images"], syn["num_categories"], syn.get("seed", 0),
            avg_positives=syn.get("avg_positives", 3.0),
            image_size=syn.get("image_size", cfg.encoder.get("input_size", 56)),
        )
    else:
        dataset = load_dataset(data["dataset"], data["format"],
                               category_names=data.get("category_names"))
        images = None
    masked = None
    if data.get("mask"):
        spec, rows = load_mask_manifest(data["mask"])
        if rows.shape != dataset.labels.shape:
            raise CliError(EXIT_USAGE, "mask manifest shape does not match the dataset")
        masked = dataset.with_labels(rows)
        masked_meta = spec
    else:
        masked_meta = None
    return dataset, images, masked, masked_meta


def _build_model(cfg: RunConfig, category_names: list[str]) -> RecognitionModel:
    backend = cfg.encoder.get("backend", "synthetic")
    if backend != "synthetic":
        raise CliError(
            EXIT_USAGE,
            "only the synthetic backend is runnable without pretrained weights; "
            "point encoder.weights at a state dict to use backend 'pretrained'",
        )
    model_cfg = cfg.model
    emb_file = model_cfg.get("embeddings_file")
    embeddings = WordEmbeddings(emb_file, dim=model_cfg.get("semantic_dim", 300))
    return build_synthetic_model(
        category_names,
        semantic_dim=embeddings.dim,
        text_dim=model_cfg.get("text_dim", 512),
        joint_dim=model_cfg.get("joint_dim", 64),
        prompt_length=model_cfg.get("prompt_length", 16),
        input_size=cfg.encoder.get("input_size", 56),
        temperature=model_cfg.get("temperature", cfg.loss.get("temperature", 0.07)),
        seed=model_cfg.get("seed", 0),
        embeddings=embeddings,
    )


def cmd_mask(args) -> int:
    try:
        dataset = load_dataset(args.dataset, args.format,
                               category_names=None)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, str(exc))
    spec = MaskSpec(args.proportion, args.seed, args.mode)
    masked = apply_partial_mask(dataset, spec)
    out = Path(args.out)
    write_manifest(out.parent if out.suffix else out, "mask", vars(args))
    if not out.suffix:
        out = out / "mask.json"
    try:
        save_mask_manifest(masked, spec, out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write mask manifest: {exc}")
    print(f"wrote {out}: N={masked.num_images} C={masked.num_categories} "
          f"known fraction {masked.known_fraction():.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    write_manifest(out, "train", vars(args))
    dataset, images, masked, mask_spec = _build_dataset(cfg)
    if images is None:
        raise CliError(EXIT_USAGE, "training currently requires a synthetic data section")
    train_set = masked if masked is not None else dataset
    model = _build_model(cfg, dataset.category_names)
    tcfg = cfg.train_config()
    breakdown = trainable_parameter_breakdown(model)
    print(f"trainable parameters: {breakdown['total']}")
    records: list[dict] = []
    interrupted = False
    try:
        train(train_set, images, model, tcfg, eval_dataset=dataset, log_records=records)
    except TrainingDiverged as exc:
        save_checkpoint(out / "checkpoint.pt", model, tcfg, len(records))
        raise CliError(EXIT_DIVERGED, f"training aborted: {exc}")
    except KeyboardInterrupt:
        interrupted = True
    save_checkpoint(out / "checkpoint.pt", model, tcfg, len(records))
    with open(out / "log.jsonl", "w") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
    if records:
        plot_loss_curve(records, out / "loss_curve.png")
    (out / "params.json").write_text(json.dumps(breakdown, indent=2))
    if interrupted:
        print("interrupted; checkpoint persisted")
        return 130
    print(f"finished {len(records)} epochs; final loss {records[-1]['loss']:.5g}")
    return 0


def _policies(args):
    if args.policy == "all":
        return [("top_k", None, args.top_k), ("threshold", args.threshold, args.top_k)]
    if args.policy == "top_k":
        return [("top_k", None, args.top_k)]
    return [("threshold", args.threshold, args.top_k)]


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    write_manifest(out, "eval", vars(args))
    dataset, images, _, _ = _build_dataset(cfg)
    meta = {"seed": cfg.train.get("seed", 0), "proportion": args.proportion}
    reports = []
    if args.scores_file:
        scores = np.load(args.scores_file) if args.scores_file.endswith(".npy") else np.asarray(
            json.loads(Path(args.scores_file).read_text()))
        if scores.shape != dataset.labels.shape:
            raise CliError(EXIT_CATEGORY_MISMATCH,
                           "scores file shape does not match the dataset")
        for policy, threshold, top_k in _policies(args):
            reports.append(build_report(scores, np.asarray(dataset.labels), policy=policy,
                                        threshold=threshold, top_k=top_k,
                                        meta={**meta, "policy": policy}))
    else:
        if not args.checkpoint:
            raise CliError(EXIT_USAGE, "need --checkpoint or --scores-file")
        model = _build_model(cfg, dataset.category_names)
        try:
            load_checkpoint(args.checkpoint, model)
        except FileNotFoundError as exc:
            raise CliError(EXIT_IO, str(exc))
        except ValueError as exc:
            raise CliError(EXIT_CATEGORY_MISMATCH, str(exc))
        if images is None:
            raise CliError(EXIT_USAGE, "evaluation requires a synthetic data section")
        for policy, threshold, top_k in _policies(args):
            try:
                reports.append(evaluate(model, dataset, images, policy=policy,
                                        threshold=threshold, top_k=top_k,
                                        meta={**meta, "policy": policy}))
            except ValueError as exc:
                raise CliError(EXIT_CATEGORY_MISMATCH, str(exc))
    write_csv(reports, out / "metrics.csv")
    for i, report in enumerate(reports):
        name = report.meta.get("policy", str(i))
        write_json(report, out / f"metrics_{name}.json")
        print(f"[{name}] mAP {report.mAP:.4f} OF1 {report.OF1:.4f} CF1 {report.CF1:.4f}")
    return 0


def cmd_cam(args) -> int:
    cfg = load_run_config(args.config)
    out = Path(args.out)
    write_manifest(out, "cam", vars(args))
    dataset, images, _, _ = _build_dataset(cfg)
    model = _build_model(cfg, dataset.category_names)
    load_checkpoint(args.checkpoint, model)
    if args.image.startswith("synthetic:"):
        if images is None:
            raise CliError(EXIT_USAGE, "synthetic image reference without a synthetic dataset")
        idx = int(args.image.split(":", 1)[1])
        if not 0 <= idx < images.shape[0]:
            raise CliError(EXIT_USAGE, f"image index {idx} out of range")
        image = images[idx]
    else:
        from PIL import Image

        size = cfg.encoder.get("input_size", 56)
        try:
            with Image.open(args.image) as im:
                im = im.convert("RGB").resize((size, size))
                image = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
        except OSError as exc:
            raise CliError(EXIT_IO, f"unreadable image: {exc}")
    with torch.no_grad():
        scores, attention = model(torch.as_tensor(image, dtype=torch.float32), True)
    scores = scores.numpy().squeeze(0)
    attention = attention.squeeze(0)
    paths = save_cam_overlays(image, attention.numpy(), dataset.category_names,
                              scores, args.topk, out)
    order = np.argsort(-scores, kind="stable")[: args.topk]
    (out / "scores.json").write_text(json.dumps({
        "scores": {dataset.category_names[c]: float(scores[c]) for c in order},
        "files": [p.name for p in paths],
    }, indent=2))
    print(f"wrote {len(paths)} overlays to {out}")
    return 0


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise CliError(EXIT_USAGE, f"runs directory not found: {runs}")
    reports: list[MetricsReport] = []
    for path in sorted(runs.rglob("metrics_*.json")):
        reports.append(read_json(path))
    if not reports:
        raise CliError(EXIT_USAGE, f"no metrics_*.json files under {runs}")
    out = Path(args.out)
    write_manifest(out, "report", vars(args))
    summary = aggregate_reports(reports)
    rows = summary["rows"]
    with open(out / "report.csv", "w") as f:
        f.write("proportion,n_runs,mAP_mean,mAP_std,OF1_mean,OF1_std,CF1_mean,CF1_std\n")
        for r in rows:
            f.write(f"{r['proportion']},{r['n_runs']},"
                    f"{r['mAP']['mean']:.6f},{r['mAP']['std']:.6f},"
                    f"{r['OF1']['mean']:.6f},{r['OF1']['std']:.6f},"
                    f"{r['CF1']['mean']:.6f},{r['CF1']['std']:.6f}\n")
    lines = ["| metric | " + " | ".join(f"{r['proportion']:.0%}" for r in rows) + " | Avg. |",
             "|" + "---|" * (len(rows) + 2)]
    for key in ("mAP", "OF1", "CF1"):
        cells = [f"{r[key]['mean']:.3f} ± {r[key]['std']:.3f}" for r in rows]
        lines.append(f"| {key} | " + " | ".join(cells) + f" | {summary['average'][key]:.3f} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    plot_proportion_curves(summary, out / "report.png")
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"aggregated {len(reports)} reports over {len(rows)} proportions -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlrpl",
                                     description="Partial-label multi-label recognition toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="generate a partial-label mask manifest")
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", required=True,
                   choices=["coco_json", "voc_xml", "synthetic_manifest"])
    p.add_argument("--proportion", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["per_image", "global"], default="per_image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train prompts + decoupling head")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a score matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--scores-file")
    p.add_argument("--policy", choices=["top_k", "threshold", "all"], default="top_k")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--top-k", type=int, default=3, dest="top_k")
    p.add_argument("--proportion", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cam", help="export attention heat-map overlays")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True,
                   help="image file path, or synthetic:IDX for a synthetic sample")
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("report", help="aggregate metrics across runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
