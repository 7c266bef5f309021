"""Command-line interface.

Subcommands mirror the pipeline stages: ``mosaic`` converts RGB images to
Bayer mosaics, ``estimate`` runs motion estimation for one frame pair,
``propagate`` applies a stored motion field to a label map, ``run`` drives a
whole sequence with adaptive key frames, and ``eval``/``report`` compute
mIoU and the FLOPs summary. The BAYERMC_THREADS environment variable caps
worker parallelism; results are identical for any setting.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cabr, fme, frame_io, metrics
from .config import DEFAULT_BACKBONE_GFLOPS, PipelineConfig, load_pipeline_config
from .frame_io import FrameKind
from .mv_refine import refine_mvs
from .pipeline import MissingKeyLabels, run_sequence
from .propagate import predict_labels

_KINDS = {
    "luma": FrameKind.LUMA,
    "rggb": FrameKind.BAYER_RGGB,
    "bggr": FrameKind.BAYER_BGGR,
    "grbg": FrameKind.BAYER_GRBG,
    "gbrg": FrameKind.BAYER_GBRG,
}

FRAME_SUFFIXES = (".pgm", ".png")


def _frame_files(directory: Path) -> list:
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in FRAME_SUFFIXES)


def _load_config(args) -> PipelineConfig:
    cfg = load_pipeline_config(path=getattr(args, "config", None),
                               preset=getattr(args, "preset", None))
    overrides = {}
    if getattr(args, "aem_threshold", None) is not None:
        overrides["aem_threshold"] = args.aem_threshold
    if getattr(args, "max_gop", None) is not None:
        overrides["max_gop"] = args.max_gop
    if getattr(args, "backbone_gflops", None) is not None:
        overrides["backbone_gflops"] = args.backbone_gflops
    if getattr(args, "no_refine", False):
        overrides["refine_enabled"] = False
    if overrides:
        import dataclasses
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def cmd_mosaic(args) -> int:
    in_dir = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pattern = _KINDS[args.pattern]
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".png")
    if not files:
        print(f"warning: no PNG inputs found in {in_dir}", file=sys.stderr)
        return 0
    failures = 0
    for path in files:
        try:
            r, g, b = frame_io.load_rgb_png(path)
            frame = frame_io.mosaic_rgb(r, g, b, pattern)
            frame_io.save_frame(frame, out_dir / (path.stem + ".pgm"))
        except Exception as exc:
            failures += 1
            print(f"error: {path}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    kind = _KINDS[args.kind]
    cur = frame_io.load_frame(args.cur, kind=kind)
    ref = frame_io.load_frame(args.ref, kind=kind)
    fields = fme.estimate_motion(cur, ref, cfg.fme)
    refined = refine_mvs(fields[-1], cfg.deviation_threshold,
                         cur=cur, ref=ref, config=cfg.fme)
    out_path = Path(args.out)
    fme.save_motion_field(list(fields[:-1]) + [refined], out_path)

    energy_path = Path(args.energy_out) if args.energy_out else \
        out_path.with_name(out_path.stem + "_energy.pgm")
    energy = np.clip(np.rint(refined.energy * 255.0), 0, 255).astype(np.uint8)
    frame_io.save_frame(
        frame_io.Frame(width=refined.grid_w, height=refined.grid_h, data=energy),
        energy_path)
    return 0


def cmd_propagate(args) -> int:
    labels = frame_io.load_labels(args.labels, num_classes=args.classes)
    field = fme.load_motion_field(args.field)
    predicted = predict_labels(labels, field, scale=args.scale)
    frame_io.save_labels(predicted, args.out)
    return 0


def _write_run_outputs(result, names, out_dir: Path, report: dict) -> None:
    labels_dir = out_dir / "labels"
    labels_dir.mkdir(parents=True, exist_ok=True)
    for name, labels in zip(names, result.labels):
        frame_io.save_labels(labels, labels_dir / (name + ".png"))
    with open(out_dir / "decisions.jsonl", "w", encoding="utf-8") as fh:
        for decision in result.decisions:
            fh.write(json.dumps(decision.to_json_dict()) + "\n")
    (out_dir / "ledger.json").write_text(result.ledger.to_json() + "\n",
                                         encoding="utf-8")
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=1) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(result.ledger.table() + "\n",
                                        encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    kind = _KINDS[args.kind]
    frames_dir = Path(args.frames)
    files = _frame_files(frames_dir)
    if not files:
        print(f"error: no frames found in {frames_dir}", file=sys.stderr)
        return 1
    frames = [frame_io.load_frame(p, kind=kind) for p in files]
    names = [p.stem for p in files]
    key_dir = Path(args.key_labels)

    def key_lookup(index: int):
        path = key_dir / (names[index] + ".png")
        if not path.exists():
            raise KeyError(index)
        return frame_io.load_labels(path, num_classes=args.classes)

    weights_path = args.weights or cfg.weights_path
    weights = cabr.load_weights(weights_path) if weights_path else None

    try:
        result = run_sequence(frames, key_lookup, cfg, weights=weights)
    except MissingKeyLabels as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    report = {
        "frames": len(frames),
        "keyframes": result.keyframes,
        "scale": result.scale,
        "components": result.ledger.as_dict(),
        "backbone_gflops_per_keyframe": cfg.backbone_gflops,
        "average_gflops_per_frame": metrics.ledger_report(
            result.ledger, cfg.backbone_gflops, len(frames), result.keyframes),
    }
    if args.truth:
        truth_dir = Path(args.truth)
        per_frame = []
        nonkey = []
        for name, labels, decision in zip(names, result.labels, result.decisions):
            truth_path = truth_dir / (name + ".png")
            if not truth_path.exists():
                per_frame.append(None)
                continue
            truth = frame_io.load_labels(truth_path, num_classes=args.classes)
            score = metrics.miou(labels, truth)
            per_frame.append(score)
            if decision.kind.value != "key":
                nonkey.append(score)
        report["miou_per_frame"] = per_frame
        if nonkey:
            report["miou_mean_nonkey"] = sum(nonkey) / len(nonkey)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_outputs(result, names, out_dir, report)
    print(json.dumps(report, indent=1))
    return 0


def cmd_eval(args) -> int:
    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    scores = {}
    for path in sorted(truth_dir.glob("*.png")):
        pred_path = pred_dir / path.name
        if not pred_path.exists():
            print(f"error: missing prediction for {path.name}", file=sys.stderr)
            return 1
        truth = frame_io.load_labels(path, num_classes=args.classes)
        pred = frame_io.load_labels(pred_path, num_classes=args.classes)
        scores[path.stem] = metrics.miou(pred, truth, ignore_class=args.ignore)
    if not scores:
        print(f"warning: no label maps found in {truth_dir}", file=sys.stderr)
        return 0
    summary = {"per_frame": scores,
               "mean": sum(scores.values()) / len(scores)}
    print(json.dumps(summary, indent=1))
    return 0


def cmd_report(args) -> int:
    ledger = metrics.FlopLedger.from_json(Path(args.ledger).read_text(encoding="utf-8"))
    average = metrics.ledger_report(ledger, args.backbone_gflops,
                                    args.frames, args.keyframes)
    print(ledger.table())
    print(f"frames: {args.frames}  keyframes: {args.keyframes}")
    print(f"average per-frame GFLOPs: {average:.4f}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(fme.PRESETS),
                        help="named FME parameter set")
    parser.add_argument("--config", help="TOML config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayermc",
        description="Block-matching motion estimation and label propagation "
                    "for Bayer/luma video sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mosaic", help="convert RGB PNGs to Bayer PGM mosaics")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pattern", choices=["rggb", "bggr", "grbg", "gbrg"],
                   default="rggb")
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("estimate", help="motion-estimate one frame pair")
    p.add_argument("--cur", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True, help="motion field JSON path")
    p.add_argument("--energy-out", help="energy map PGM (default: <out>_energy.pgm)")
    p.add_argument("--kind", choices=sorted(_KINDS), default="luma")
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("propagate", help="apply a motion field to a label map")
    p.add_argument("--labels", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, choices=[1, 2], default=1)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("run", help="process a frame directory end to end")
    p.add_argument("--frames", required=True)
    p.add_argument("--key-labels", required=True,
                   help="directory of label maps injected at key frames")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth labels for mIoU reporting")
    p.add_argument("--weights", help="CaBR weight file (fallback refiner otherwise)")
    p.add_argument("--kind", choices=sorted(_KINDS), default="luma")
    p.add_argument("--classes", type=int)
    p.add_argument("--aem-threshold", type=float)
    p.add_argument("--max-gop", type=int)
    p.add_argument("--backbone-gflops", type=float)
    p.add_argument("--no-refine", action="store_true",
                   help="skip block refinement on non-key frames")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="mIoU between two label directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--ignore", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarize a flop ledger")
    p.add_argument("--ledger", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--keyframes", type=int, required=True)
    p.add_argument("--backbone-gflops", type=float,
                   default=DEFAULT_BACKBONE_GFLOPS)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
