"""Command-line surface: gen-synth, pretrain-rain, train-seg, stylize, evaluate.

Every flag overrides the corresponding key of the YAML config given with
``--config``; omitted flags fall back to config values.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_config, save_config
from .errors import FudaError


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="YAML run config")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--data", type=Path, default=None,
                   help="dataset root (overrides config data.root)")


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None) is not None:
        cfg.data.root = str(args.data)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuda",
        description="Few-shot unsupervised domain adaptation for segmentation "
                    "via adversarial style exploration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate the synthetic phantom dataset")
    _common(p)

    p = sub.add_parser("pretrain-rain", help="stage 1: pretrain the stylizer")
    _common(p)

    p = sub.add_parser("train-seg", help="stage 2: train the segmenter")
    _common(p)
    p.add_argument("--rain-ckpt", type=Path, default=None,
                   help="stage-1 checkpoint (default: <out>/rain.ckpt)")
    p.add_argument("--target-scope", choices=["few-shot", "one-shot"],
                   default="few-shot")
    p.add_argument("--target-patient", type=str, default=None,
                   help="override config data.target_patient")
    p.add_argument("--target-slice", type=int, default=None,
                   help="slice index for one-shot scope (default: middle slice)")
    p.add_argument("--baseline", action="store_true",
                   help="train on source only (no stylization); comparison baseline")

    p = sub.add_parser("stylize", help="emit a content/stylized image grid")
    _common(p)
    p.add_argument("--rain-ckpt", type=Path, required=True)
    p.add_argument("--target-patient", type=str, default=None)
    p.add_argument("--n-content", type=int, default=4)

    p = sub.add_parser("evaluate", help="evaluate a segmenter checkpoint")
    _common(p)
    p.add_argument("--seg-ckpt", type=Path, required=True)
    p.add_argument("--patients", type=str, default=None,
                   help="comma-separated patient ids (default: config test split)")
    p.add_argument("--label", type=str, default="run", help="row label in report.csv")
    p.add_argument("--save-predictions", action="store_true")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except FudaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    from . import training

    cfg = _load(args)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    if getattr(args, "target_patient", None):
        cfg.data.target_patient = args.target_patient

    if args.command == "gen-synth":
        root = Path(cfg.data.root)
        training.generate_dataset(cfg, root)
        save_config(cfg, out / "config_used.yaml")
        print(f"wrote phantom dataset to {root}")
        return 0

    if args.command == "pretrain-rain":
        ckpt = training.train_stage1(cfg, cfg.data.root, out)
        save_config(cfg, out / "config_used.yaml")
        print(f"stage-1 checkpoint: {ckpt}")
        return 0

    if args.command == "train-seg":
        rain_ckpt = args.rain_ckpt if args.rain_ckpt else out / training.RAIN_CKPT
        ckpt = training.train_stage2(
            cfg, cfg.data.root, None if args.baseline else rain_ckpt, out,
            target_scope=args.target_scope, target_slice=args.target_slice,
            baseline=args.baseline)
        save_config(cfg, out / "config_used.yaml")
        print(f"stage-2 checkpoint: {ckpt}")
        return 0

    if args.command == "stylize":
        grid = out / "style_grid.png"
        training.stylize_grid(cfg, args.rain_ckpt, cfg.data.root, grid,
                              n_content=args.n_content, seed=cfg.seed)
        print(f"wrote {grid}")
        return 0

    if args.command == "evaluate":
        pats = args.patients.split(",") if args.patients else None
        report = training.evaluate_checkpoint(
            cfg, args.seg_ckpt, cfg.data.root, out, label=args.label,
            patients=pats, save_predictions=args.save_predictions)
        print(f"avg dice {report.avg.dice:.4f}  avg hd {report.avg.hd_mm:.2f} mm")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
