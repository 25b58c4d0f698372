"""Command-line entry point: ``voskit <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attention, config as cfgmod, fileio, fusion, pipeline, postprocess, synthetic
from .errors import ConfigError, InputError, VosError
from .metrics import EvalConfig, evaluate_sequence
from .propagation import labels_from_volume, propagate

log = logging.getLogger("voskit")


def _matrix(text):
    """Parse ``"1,0;0,1"`` into a 2-D array."""
    try:
        rows = [[float(x) for x in r.split(",")] for r in text.split(";") if r.strip()]
        return np.array(rows, dtype=float)
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}: {exc}") from exc


def _ids(text):
    if not text:
        return []
    return [int(x) for x in text.split(",") if x.strip()]


def _add_propagation_flags(p):
    p.add_argument("--config", help="JSON config (default: $VOSKIT_CONFIG)")
    p.add_argument("--variant", choices=("eq1", "eq2", "eq3"), dest="attention_variant")
    p.add_argument("--temperature", type=float)
    p.add_argument("--id-dim", type=int, dest="id_dim")
    p.add_argument("--stride", type=int)
    p.add_argument("--capacity", type=int, dest="memory.capacity")
    p.add_argument("--policy", choices=("keep-all", "stride", "first-plus-stride"),
                   dest="memory.policy")
    p.add_argument("--topk", type=int, dest="memory.topk_k",
                   help="enable top-k memory reads with this k")
    p.add_argument("--seed", type=int)


def _config_from(args):
    cfg = cfgmod.load_config(getattr(args, "config", None))
    overrides = {}
    for key, value in vars(args).items():
        if key in ("attention_variant", "temperature", "id_dim", "stride", "seed", "fusion",
                   "tolerance_px") or key.startswith(("memory.", "boundary.", "zoom.")):
            overrides[key] = value
    if overrides.get("memory.topk_k") is not None:
        overrides["memory.topk_enabled"] = True
    if getattr(args, "scales", None):
        overrides["scales"] = [float(s) for s in args.scales.split(",")]
    if getattr(args, "no_flip", False):
        overrides["flip"] = False
    if getattr(args, "boundary", False):
        overrides["boundary.enabled"] = True
    if getattr(args, "zoom_refine", False):
        overrides["zoom.enabled"] = True
    return cfgmod.override(cfg, overrides)


def cmd_propagate(args):
    cfg = _config_from(args)
    frames = fileio.read_frames(args.frames)
    first = fileio.read_mask(args.first_mask)
    res = propagate(frames, first, cfg.propagation())
    fileio.write_prediction_dir(args.out, [v for _, v in res], source_id=Path(args.out).name)
    fileio.write_masks(args.out, [m for m, _ in res])
    print(f"propagated {len(frames)} frames -> {args.out}")
    return 0


def cmd_fuse(args):
    sets = []
    for d in args.pred:
        vols, meta = fileio.read_prediction_dir(d)
        sets.append(fusion.PredictionSet(meta["source_id"], vols, meta["native_scale"],
                                         meta["flipped"]))
    if args.size:
        h, w = (int(x) for x in args.size.lower().split("x"))
    else:
        sizes = [s.volumes[0].shape[1:] for s in sets if s.native_scale == 1.0]
        if not sizes:
            raise ConfigError("no scale-1 prediction to infer the size from; pass --size HxW")
        h, w = sizes[0]
    normed = [fusion.normalize_prediction(s, (h, w)) for s in sets]
    if args.method == "keypoint-vote":
        if not args.frames:
            raise ConfigError("keypoint voting needs --frames")
        fused = fusion.fuse_keypoint_voting(normed, None, fileio.read_frames(args.frames))
    else:
        fused = fusion.FUSERS[args.method](normed)
    fileio.write_prediction_dir(args.out, fused, source_id="fused")
    fileio.write_masks(args.out, [labels_from_volume(v) for v in fused])
    print(f"fused {len(sets)} sources ({args.method}) -> {args.out}")
    return 0


def cmd_refine_boundary(args):
    masks = fileio.read_masks(args.masks)
    frames = fileio.read_frames(args.frames)
    vols = fileio.read_prediction_dir(args.volumes)[0] if args.volumes else [None] * len(masks)
    out = []
    for m, f, v in zip(masks, frames, vols):
        patches = postprocess.extract_boundary_patches(m, args.patch_size, args.patch_stride,
                                                       frame=f, prob=v)
        out.append(postprocess.stitch_patches(m, [(p, postprocess.refine_patch(p))
                                                  for p in patches]))
    fileio.write_masks(args.out, out)
    print(f"refined {len(out)} masks -> {args.out}")
    return 0


def cmd_zoom_refine(args):
    cfg = _config_from(args)
    masks = fileio.read_masks(args.masks)
    frames = fileio.read_frames(args.frames)
    first = fileio.read_mask(args.first_mask)
    out = postprocess.zoom_refine_sequence(frames, masks, first, cfg.zoom_config(),
                                           cfg.propagation())
    fileio.write_masks(args.out, out)
    print(f"zoom-refined {len(out)} masks -> {args.out}")
    return 0


def cmd_evaluate(args):
    preds = fileio.read_masks(args.pred)
    gts = fileio.read_masks(args.gt)
    report = evaluate_sequence(preds, gts, _ids(args.seen), _ids(args.unseen),
                               EvalConfig(tolerance_px=args.tolerance))
    print(report.table())
    if args.report:
        Path(args.report).write_text(json.dumps(report.records(), indent=2, sort_keys=True))
    return 0


def cmd_attend_demo(args):
    q, k, v = _matrix(args.q), _matrix(args.k), _matrix(args.v)
    np.set_printoptions(precision=6, suppress=True)
    topk = args.topk
    if args.variant == "eq1":
        key, val = k, v
    else:
        e = _matrix(args.e) if args.e else np.zeros_like(v)
        if args.variant == "eq2":
            key, val = k, v + e
        else:
            proj = attention.LayerProjections(
                _matrix(args.gate).ravel() if args.gate else np.zeros(e.shape[1]),
                _matrix(args.value_weights) if args.value_weights
                else np.zeros((e.shape[1], v.shape[1])),
            )
            key, gate = attention.gate_keys(k, e, proj)
            val = attention.augment_values(v, e, proj)
            print("gate:\n", gate)
    scores = attention.correlation(q, key)
    if topk:
        scores = attention.topk_filter(scores, topk)
    print("scores:\n", scores)
    print("weights:\n", attention.softmax_rows(scores))
    print("output:\n", attention.attend(q, key, val, topk=topk))
    return 0


def cmd_gen_synthetic(args):
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text())
            shapes = [synthetic.ShapeSpec(**s) for s in data.pop("shapes", [])]
            clips = {Path(args.spec).stem: synthetic.ClipSpec(shapes=shapes, **data)}
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad clip spec {args.spec}: {exc}") from exc
    else:
        specs = synthetic.SUITES[args.suite]()
        clips = {f"{args.suite}_{i:02d}": s for i, s in enumerate(specs)}
    for name, spec in clips.items():
        frames, masks = synthetic.gen_synthetic(spec)
        ids = sorted({int(i) for m in masks for i in np.unique(m)} - {0})
        pipeline.write_video(Path(args.out) / name, frames, masks, {"seen": ids, "unseen": []})
    print(f"wrote {len(clips)} clip(s) -> {args.out}")
    return 0


def cmd_run(args):
    cfg = _config_from(args)
    reports = pipeline.run_many(cfg, args.input, args.output, jobs=args.jobs)
    for name, rep in reports.items():
        if rep is not None:
            print(f"[{name}]")
            print(rep.table())
        else:
            print(f"[{name}] done (no ground truth)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="voskit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="segment a clip from its first-frame mask")
    p.add_argument("--frames", required=True)
    p.add_argument("--first-mask", required=True)
    p.add_argument("--out", required=True)
    _add_propagation_flags(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("fuse", help="fuse probability-volume directories")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=sorted(fusion.FUSERS), default="average")
    p.add_argument("--frames", help="frames directory (keypoint voting)")
    p.add_argument("--size", help="reference size HxW")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("refine-boundary", help="boundary patch refinement")
    p.add_argument("--masks", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=5)
    p.add_argument("--patch-stride", type=int, default=3)
    p.set_defaults(func=cmd_refine_boundary)

    p = sub.add_parser("zoom-refine", help="crop-then-zoom small objects")
    p.add_argument("--masks", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--first-mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--zoom", type=float, dest="zoom.zoom")
    p.add_argument("--margin", type=float, dest="zoom.margin")
    p.add_argument("--area-threshold", type=int, dest="zoom.area_threshold")
    _add_propagation_flags(p)
    p.set_defaults(func=cmd_zoom_refine)

    p = sub.add_parser("evaluate", help="J / F / overall scores")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--seen", help="comma-separated seen object ids")
    p.add_argument("--unseen", help="comma-separated unseen object ids")
    p.add_argument("--tolerance", type=int)
    p.add_argument("--report", help="write JSON records here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attend-demo", help="print attention scores/weights for small inputs")
    p.add_argument("--q", required=True, help='rows separated by ";", e.g. "1,0;0,1"')
    p.add_argument("--k", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--e")
    p.add_argument("--variant", choices=("eq1", "eq2", "eq3"), default="eq1")
    p.add_argument("--gate", help="gate weights, one row")
    p.add_argument("--value-weights")
    p.add_argument("--topk", type=int)
    p.set_defaults(func=cmd_attend_demo)

    p = sub.add_parser("gen-synthetic", help="write synthetic clips with ground truth")
    p.add_argument("--suite", choices=sorted(synthetic.SUITES), default="moving")
    p.add_argument("--spec", help="JSON clip description")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--input", required=True, help="video directory or a directory of videos")
    p.add_argument("--output", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--scales", help="comma-separated resize factors")
    p.add_argument("--no-flip", action="store_true")
    p.add_argument("--fusion", choices=sorted(fusion.FUSERS))
    p.add_argument("--boundary", action="store_true", help="enable boundary refinement")
    p.add_argument("--zoom-refine", action="store_true", help="enable crop-then-zoom")
    p.add_argument("--tolerance", type=int, dest="tolerance_px")
    _add_propagation_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except VosError as exc:
        print(f"voskit {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"voskit {args.command}: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
