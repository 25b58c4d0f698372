"""End-to-end orchestration: propagate per scale/flip, fuse, refine, evaluate.

Input video layout::

    <video>/frames/00000.png ...   RGB frames (PNG or PPM)
    <video>/first_mask.png         palette mask of frame 0
    <video>/gt/00000.png ...       optional ground truth, enables scoring
    <video>/meta.json              optional {"seen": [...], "unseen": [...]}

Output layout::

    <out>/stages/propagate/<tag>/  per-augmentation masks + volumes
    <out>/stages/fuse/             fused masks + volumes
    <out>/stages/refine_boundary/  masks (when enabled)
    <out>/stages/zoom_refine/      masks (when enabled)
    <out>/masks/                   final masks
    <out>/report.txt, report.json  when ground truth is present
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fileio, fusion, postprocess
from .errors import InputError, StageError
from .metrics import EvalConfig, evaluate_sequence
from .propagation import labels_from_volume, one_hot_volume, propagate

log = logging.getLogger(__name__)


def load_video(input_dir):
    d = Path(input_dir)
    if not (d / "frames").is_dir():
        raise InputError(f"{d}: missing frames/ directory")
    if not (d / "first_mask.png").exists():
        raise InputError(f"{d}: missing first_mask.png")
    frames = fileio.read_frames(d / "frames")
    first_mask = fileio.read_mask(d / "first_mask.png")
    if first_mask.shape != frames[0].shape[:2]:
        raise InputError(f"{d}: first mask {first_mask.shape} does not match frames")
    gt = fileio.read_masks(d / "gt") if (d / "gt").is_dir() else None
    meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
    return frames, first_mask, gt, meta


def write_video(output_dir, frames, masks, meta=None):
    """Write a clip in the pipeline's input layout."""
    d = Path(output_dir)
    fileio.write_frames(d / "frames", frames)
    fileio.write_mask(d / "first_mask.png", masks[0])
    fileio.write_masks(d / "gt", masks)
    if meta is not None:
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _tag(scale, flipped):
    return f"s{scale:g}" + ("_flip" if flipped else "")


def _scaled_inputs(frames, first_mask, scale, flipped):
    h, w = first_mask.shape
    size = (max(1, round(h * scale)), max(1, round(w * scale)))
    out_frames = []
    for f in frames:
        g = np.moveaxis(fusion.resize_bilinear(np.moveaxis(f, 2, 0), size), 0, 2)
        g = np.clip(g, 0.0, 1.0)
        out_frames.append(g[:, ::-1] if flipped else g)
    m = fusion.resize_nearest(first_mask, size)
    return out_frames, (m[:, ::-1] if flipped else m)


def _write_stage(directory, masks, volumes=None, meta=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(masks):
        fileio.write_mask(d / f"{t:05d}.png", m)
    if volumes is not None:
        for t, v in enumerate(volumes):
            fileio.write_volume(d / f"{t:05d}.vosp", v)
    if meta is not None:
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # noqa: BLE001  -- any failure is reported with its stage
        raise StageError(name, exc) from exc


def run_propagation_stage(config, frames, first_mask):
    pcfg = config.propagation()
    sets = []
    flips = (False, True) if config.flip else (False,)
    for scale in config.scales:
        for flipped in flips:
            fs, m0 = _scaled_inputs(frames, first_mask, scale, flipped)
            res = propagate(fs, m0, pcfg)
            sets.append(
                fusion.PredictionSet(_tag(scale, flipped), [v for _, v in res], scale, flipped)
            )
    return sets


def run_fusion_stage(config, sets, frames, first_mask):
    ref = first_mask.shape
    normed = [fusion.normalize_prediction(s, ref) for s in sets]
    if config.fusion == "keypoint-vote" and len(normed) >= 2:
        fused = fusion.fuse_keypoint_voting(normed, None, frames)
    elif config.fusion == "max":
        fused = fusion.fuse_max(normed)
    else:
        fused = fusion.fuse_average(normed)
    # the annotated first frame is given, not predicted
    fused[0] = one_hot_volume(first_mask, fused[0].shape[0])
    return fused


def run_boundary_stage(config, masks, frames, volumes):
    b = config.boundary
    out = [masks[0].copy()]
    for t in range(1, len(masks)):
        patches = postprocess.extract_boundary_patches(
            masks[t], b.patch_size, b.stride, frame=frames[t], prob=volumes[t]
        )
        refined = [(p, postprocess.refine_patch(p)) for p in patches]
        out.append(postprocess.stitch_patches(masks[t], refined))
    return out


def run_zoom_stage(config, masks, frames, first_mask):
    return postprocess.zoom_refine_sequence(
        frames, masks, first_mask, config.zoom_config(), config.propagation()
    )


def run_pipeline(config, input_dir, output_dir):
    """Run every enabled stage on one video; returns the ScoreReport or None."""
    config.validate()
    frames, first_mask, gt, meta = load_video(input_dir)
    out = Path(output_dir)
    stages = out / "stages"

    sets = _stage("propagate", run_propagation_stage, config, frames, first_mask)
    for s in sets:
        _write_stage(
            stages / "propagate" / s.source_id,
            [labels_from_volume(v) for v in s.volumes],
            s.volumes,
            {"source_id": s.source_id, "native_scale": s.native_scale, "flipped": s.flipped},
        )

    fused = _stage("fuse", run_fusion_stage, config, sets, frames, first_mask)
    masks = [labels_from_volume(v) for v in fused]
    masks[0] = first_mask.copy()
    _write_stage(stages / "fuse", masks, fused, {"source_id": "fused", "native_scale": 1.0,
                                                 "flipped": False})

    if config.boundary.enabled:
        masks = _stage("refine_boundary", run_boundary_stage, config, masks, frames, fused)
        _write_stage(stages / "refine_boundary", masks)
    if config.zoom.enabled:
        masks = _stage("zoom_refine", run_zoom_stage, config, masks, frames, first_mask)
        _write_stage(stages / "zoom_refine", masks)

    _write_stage(out / "masks", masks)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))

    if gt is None:
        return None
    report = _stage(
        "evaluate",
        evaluate_sequence,
        masks,
        gt,
        meta.get("seen"),
        meta.get("unseen"),
        EvalConfig(tolerance_px=config.tolerance_px),
    )
    (out / "report.txt").write_text(report.table() + "\n")
    (out / "report.json").write_text(json.dumps(report.records(), indent=2, sort_keys=True))
    return report


def find_videos(input_dir):
    """A video directory itself, or every video directory directly below it."""
    d = Path(input_dir)
    if (d / "frames").is_dir():
        return [d]
    vids = sorted(p for p in d.iterdir() if p.is_dir() and (p / "frames").is_dir()) if d.is_dir() else []
    if not vids:
        raise InputError(f"{d}: no video directories found")
    return vids


def _run_one(args):
    config, vid, out = args
    return run_pipeline(config, vid, out)


def run_many(config, input_dir, output_dir, jobs=1):
    """Run the pipeline over every video under ``input_dir``; returns {name: report}."""
    vids = find_videos(input_dir)
    single = len(vids) == 1 and vids[0] == Path(input_dir)
    tasks = [(config, v, Path(output_dir) if single else Path(output_dir) / v.name) for v in vids]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, tasks))
    else:
        reports = [_run_one(t) for t in tasks]
    return {v.name: r for v, r in zip(vids, reports)}

