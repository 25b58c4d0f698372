"""Boundary patch refinement and tracking-based crop-then-zoom for small objects."""

from __future__ import annotations

import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ConfigError, ContractError, ShapeError, TrackingLost
from .fusion import resize_nearest
from .propagation import PropagationConfig, propagate


class DegenerateBoxWarning(UserWarning):
    pass


@dataclass
class BoundaryPatch:
    y: int
    x: int
    size: int
    object_id: int
    height: int
    width: int
    image_crop: np.ndarray | None = None
    prob_crop: np.ndarray | None = None

    @property
    def slices(self):
        return slice(self.y, self.y + self.height), slice(self.x, self.x + self.width)


@dataclass(frozen=True)
class TrackBox:
    object_id: int
    frame_index: int
    x: int
    y: int
    w: int
    h: int


def boundary_pixels(mask, object_id):
    """Pixels of ``object_id`` with at least one differently labelled 4-neighbour."""
    m = np.asarray(mask)
    diff = np.zeros(m.shape, dtype=bool)
    diff[1:, :] |= m[1:, :] != m[:-1, :]
    diff[:-1, :] |= m[:-1, :] != m[1:, :]
    diff[:, 1:] |= m[:, 1:] != m[:, :-1]
    diff[:, :-1] |= m[:, :-1] != m[:, 1:]
    return diff & (m == object_id)


def _clamp_origin(c, size, limit):
    if size >= limit:
        return 0, limit
    return min(max(c, 0), limit - size), size


def extract_boundary_patches(mask, patch_size, stride, frame=None, prob=None):
    """Square patches covering every object's boundary.

    The frame is split into ``stride`` x ``stride`` cells; each cell holding a
    boundary pixel of an object yields one patch centred on the cell, clamped
    into the frame. ``prob`` is a label-indexed probability volume; without it
    the crop carries the object's binary mask.
    """
    if patch_size < 3:
        raise ConfigError("patch_size must be >= 3")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    mask = np.asarray(mask)
    h, w = mask.shape
    patches = []
    seen = set()
    for oid in (int(i) for i in np.unique(mask) if i != 0):
        edge = boundary_pixels(mask, oid)
        ys, xs = np.nonzero(edge)
        cells = sorted(set(zip((ys // stride).tolist(), (xs // stride).tolist())))
        for cy, cx in cells:
            centre_y = min(cy * stride + stride // 2, h - 1)
            centre_x = min(cx * stride + stride // 2, w - 1)
            y0, ph = _clamp_origin(centre_y - patch_size // 2, patch_size, h)
            x0, pw = _clamp_origin(centre_x - patch_size // 2, patch_size, w)
            key = (y0, x0, oid)
            if key in seen or not edge[y0:y0 + ph, x0:x0 + pw].any():
                continue
            seen.add(key)
            p = BoundaryPatch(y0, x0, patch_size, oid, ph, pw)
            sy, sx = p.slices
            if frame is not None:
                p.image_crop = np.asarray(frame, dtype=float)[sy, sx].copy()
            if prob is not None and oid < len(prob):
                p.prob_crop = np.asarray(prob, dtype=float)[oid][sy, sx].copy()
            else:
                p.prob_crop = (mask[sy, sx] == oid).astype(float)
            patches.append(p)
    return patches


def otsu_threshold(values):
    """Exact Otsu cut over the distinct values; None when fewer than two."""
    u, counts = np.unique(np.asarray(values, dtype=float).ravel(), return_counts=True)
    if len(u) < 2:
        return None
    w0 = np.cumsum(counts)[:-1].astype(float)
    total = counts.sum()
    w1 = total - w0
    s0 = np.cumsum(counts * u)[:-1]
    mu0 = s0 / w0
    mu1 = (np.sum(counts * u) - s0) / w1
    between = w0 * w1 * (mu0 - mu1) ** 2
    i = int(np.argmax(between))
    return 0.5 * (u[i] + u[i + 1])


def otsu_snap(image_crop, prob_crop):
    """Default refiner: Otsu threshold on intensity-weighted probabilities.

    Intensity polarity follows the object: if the probability mass sits on
    darker pixels the inverted intensity is used.
    """
    p = np.asarray(prob_crop, dtype=float)
    if np.all((p == 0.0) | (p == 1.0)):
        return p > 0.5
    if p.max() <= 0.0:
        return np.zeros(p.shape, dtype=bool)
    if image_crop is None:
        return p >= 0.5
    img = np.asarray(image_crop, dtype=float)
    intensity = img.mean(axis=2) if img.ndim == 3 else img
    inside = np.sum(p * intensity) / np.sum(p)
    rest = np.sum(1.0 - p)
    outside = np.sum((1.0 - p) * intensity) / rest if rest > 0 else inside
    if inside < outside:
        intensity = 1.0 - intensity
    weighted = p * intensity
    t = otsu_threshold(weighted)
    if t is None:
        return p >= 0.5
    return weighted > t


Refiner = Callable[[np.ndarray, np.ndarray], np.ndarray]


def refine_patch(patch, refiner=None):
    refiner = refiner or otsu_snap
    out = np.asarray(refiner(patch.image_crop, patch.prob_crop))
    if out.shape != (patch.height, patch.width):
        raise ContractError(
            f"refiner returned {out.shape}, expected {(patch.height, patch.width)}"
        )
    return out.astype(bool)


def stitch_patches(mask, refined):
    """Write refined crops back by per-pixel majority vote.

    Inside a patch of object ``o`` a True pixel votes for ``o`` and a False
    pixel votes to drop ``o`` (background if the pixel was ``o``, otherwise
    its current label). A pixel changes only when one label has strictly more
    votes than every other; ties keep the original label.
    """
    mask = np.asarray(mask)
    out = mask.copy()
    if not refined:
        return out
    h, w = mask.shape
    present = set(np.unique(mask).tolist())
    pix, lab = [], []
    for patch, crop in refined:
        if (patch.y < 0 or patch.x < 0 or patch.y + patch.height > h
                or patch.x + patch.width > w):
            raise ShapeError(f"patch at ({patch.y}, {patch.x}) leaves the frame")
        if patch.object_id not in present:
            raise ShapeError(f"patch object {patch.object_id} is not in the mask")
        crop = np.asarray(crop, dtype=bool)
        if crop.shape != (patch.height, patch.width):
            raise ContractError(f"crop {crop.shape} does not match patch size")
        sy, sx = patch.slices
        orig = mask[sy, sx]
        votes = np.where(crop, patch.object_id, np.where(orig == patch.object_id, 0, orig))
        yy, xx = np.mgrid[sy, sx]
        pix.append((yy * w + xx).ravel())
        lab.append(votes.ravel().astype(np.int64))
    pix = np.concatenate(pix)
    lab = np.concatenate(lab)
    keys, counts = np.unique(pix * 256 + lab, return_counts=True)
    kp, kl = keys // 256, keys % 256
    # per pixel: best count, and whether it is unique
    order = np.lexsort((-counts, kp))
    kp, kl, counts = kp[order], kl[order], counts[order]
    first = np.ones(len(kp), dtype=bool)
    first[1:] = kp[1:] != kp[:-1]
    idx = np.nonzero(first)[0]
    winner_pix, winner_lab, winner_cnt = kp[idx], kl[idx], counts[idx]
    runner = np.zeros(len(idx), dtype=counts.dtype)
    has_second = idx + 1 < len(kp)
    nxt = np.minimum(idx + 1, len(kp) - 1)
    same_pix = has_second & (kp[nxt] == winner_pix)
    runner[same_pix] = counts[nxt][same_pix]
    decided = winner_cnt > runner
    flat = out.reshape(-1)
    flat[winner_pix[decided]] = winner_lab[decided]
    return out


@dataclass
class TrackConfig:
    context: float = 0.25
    min_context: int = 2
    lost_threshold: float = 0.5


def mask_bbox(mask, object_id):
    """(x, y, w, h) of the object's pixels, or None when absent."""
    ys, xs = np.nonzero(np.asarray(mask) == object_id)
    if len(ys) == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)


def _clip_box(x, y, w, h, width, height):
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, width), min(y + h, height)
    return x0, y0, x1 - x0, y1 - y0


def ncc_map(template, windows):
    """NCC of a template against every window in a (ny, nx, h, w, c) view."""
    t = template - template.mean()
    tn = np.sqrt(np.sum(t * t))
    wm = windows.mean(axis=(2, 3, 4), keepdims=True)
    wc = windows - wm
    num = np.einsum("yxhwc,hwc->yx", wc, t)
    den = np.sqrt(np.sum(wc * wc, axis=(2, 3, 4))) * tn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 1e-12, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def track_box(prev_box, prev_mask, cur_frame, prev_frame, config=None):
    """Move ``prev_box`` to the best NCC match of its template in ``cur_frame``.

    The template is the previous-frame box padded with context. Candidate
    displacements span half the box size in each direction (a search window
    of twice the box). When ``prev_mask`` contains the object its extent
    replaces the box size before shifting. Raises :class:`TrackingLost` when
    no displacement scores above ``config.lost_threshold``.
    """
    cfg = config or TrackConfig()
    prev_frame = np.asarray(prev_frame, dtype=float)
    cur_frame = np.asarray(cur_frame, dtype=float)
    if prev_frame.ndim == 2:
        prev_frame = prev_frame[..., None]
        cur_frame = cur_frame[..., None]
    height, width = prev_frame.shape[:2]
    b = prev_box
    if b.w < 1 or b.h < 1:
        raise ShapeError(f"invalid box {b}")
    pad = max(cfg.min_context, math.ceil(cfg.context * max(b.w, b.h)))
    tx, ty, tw, th = _clip_box(b.x - pad, b.y - pad, b.w + 2 * pad, b.h + 2 * pad, width, height)
    if tw < 1 or th < 1:
        raise TrackingLost(f"object {b.object_id}: box outside frame")
    template = prev_frame[ty:ty + th, tx:tx + tw]
    if np.allclose(template, template.mean()):
        raise TrackingLost(f"object {b.object_id}: template has no texture")
    rx, ry = math.ceil(b.w / 2), math.ceil(b.h / 2)
    sx0, sy0 = max(tx - rx, 0), max(ty - ry, 0)
    sx1, sy1 = min(tx + tw + rx, width), min(ty + th + ry, height)
    if sx1 - sx0 < tw or sy1 - sy0 < th:
        raise TrackingLost(f"object {b.object_id}: search window empty")
    region = cur_frame[sy0:sy1, sx0:sx1]
    windows = sliding_window_view(region, (th, tw, region.shape[2]))[:, :, 0]
    scores = ncc_map(template, windows)
    dys = np.arange(scores.shape[0]) + sy0 - ty
    dxs = np.arange(scores.shape[1]) + sx0 - tx
    best = scores.max()
    if best < cfg.lost_threshold:
        raise TrackingLost(f"object {b.object_id}: best NCC {best:.3f} below threshold")
    cand = np.argwhere(scores == best)
    # closest displacement wins exact ties
    iy, ix = min(cand, key=lambda c: (abs(dys[c[0]]) + abs(dxs[c[1]]), dys[c[0]], dxs[c[1]]))
    dy, dx = int(dys[iy]), int(dxs[ix])
    extent = mask_bbox(prev_mask, b.object_id) if prev_mask is not None else None
    x, y, w, h = extent if extent is not None else (b.x, b.y, b.w, b.h)
    return TrackBox(b.object_id, b.frame_index + 1, x + dx, y + dy, w, h)


def expand_box(x, y, w, h, margin, width, height):
    mx, my = math.ceil(margin * w), math.ceil(margin * h)
    return _clip_box(x - mx, y - my, w + 2 * mx, h + 2 * my, width, height)


def crop_then_zoom(frame, box, zoom, segmenter, full_mask, margin=0.25):
    """Re-segment an upscaled crop around ``box`` and paste it back.

    The crop is the union of ``box`` and the object's extent in ``full_mask``,
    grown by ``margin`` of its size on every side. ``segmenter(img, mask,
    object_id)`` receives the zoomed crop and its nearest-upsampled mask and
    must return a label mask of the same size. Within the crop, pixels the
    segmenter assigns to the object take its id, pixels it releases become
    background, and everything else keeps its label. Pixels outside the crop
    are never touched.
    """
    if zoom < 1:
        raise ConfigError("zoom must be >= 1")
    frame = np.asarray(frame, dtype=float)
    full_mask = np.asarray(full_mask)
    height, width = full_mask.shape
    oid = box.object_id
    x0, y0, x1, y1 = box.x, box.y, box.x + box.w, box.y + box.h
    extent = mask_bbox(full_mask, oid)
    if extent is not None:
        ex, ey, ew, eh = extent
        x0, y0 = min(x0, ex), min(y0, ey)
        x1, y1 = max(x1, ex + ew), max(y1, ey + eh)
    x, y, w, h = expand_box(x0, y0, x1 - x0, y1 - y0, margin, width, height)
    if w < 1 or h < 1:
        warnings.warn(f"object {oid}: degenerate crop box, skipped", DegenerateBoxWarning)
        return full_mask.copy()
    crop_img = frame[y:y + h, x:x + w]
    crop_mask = full_mask[y:y + h, x:x + w]
    size = (max(1, round(h * zoom)), max(1, round(w * zoom)))
    zoomed_img = resize_nearest(crop_img, size)
    zoomed_mask = resize_nearest(crop_mask, size)
    result = np.asarray(segmenter(zoomed_img, zoomed_mask, oid))
    if result.shape != size:
        raise ContractError(f"segmenter returned {result.shape}, expected {size}")
    back = resize_nearest(result, (h, w))
    new = np.where(back == oid, oid, np.where(crop_mask == oid, 0, crop_mask))
    out = full_mask.copy()
    out[y:y + h, x:x + w] = new.astype(full_mask.dtype)
    return out


def identity_segmenter(img, mask, object_id):
    return mask


class PropagationSegmenter:
    """Segments a zoomed crop by propagating from the reference frame.

    The reference crop is the object's reference extent grown by ``margin``,
    resized to the query crop so both show the object at a similar relative
    scale. Other objects in the reference are kept as a distractor label.
    """

    def __init__(self, ref_frame, ref_mask, margin=0.25, config=None):
        self.ref_frame = np.asarray(ref_frame, dtype=float)
        self.ref_mask = np.asarray(ref_mask)
        self.margin = margin
        self.config = config or PropagationConfig()

    def __call__(self, img, mask, object_id):
        zh, zw = img.shape[:2]
        height, width = self.ref_mask.shape
        bbox = mask_bbox(self.ref_mask, object_id)
        if bbox is None:
            return np.where(mask == object_id, 0, mask)
        x, y, w, h = expand_box(*bbox, self.margin, width, height)
        ref_img = self.ref_frame[y:y + h, x:x + w]
        ref_lab = self.ref_mask[y:y + h, x:x + w]
        ref_bin = np.where(ref_lab == object_id, 1, np.where(ref_lab > 0, 2, 0)).astype(np.uint8)
        ref_img = resize_nearest(ref_img, (zh, zw))
        ref_bin = resize_nearest(ref_bin, (zh, zw))
        res = propagate([ref_img, np.clip(img, 0.0, 1.0)], ref_bin, self.config)
        pred = res[1][0]
        return np.where(pred == 1, object_id, 0).astype(mask.dtype)


def small_object_select(masks, area_threshold, window=3):
    """Objects whose (median-smoothed) per-frame area drops below the threshold.

    Returns ``[(object_id, [(start, end), ...]), ...]`` with inclusive frame
    ranges. Smoothing runs over each stretch of frames where the object is
    present, so absent frames split ranges.
    """
    if area_threshold < 1:
        raise ConfigError("area_threshold must be >= 1 pixel")
    masks = [np.asarray(m) for m in masks]
    ids = sorted({int(i) for m in masks for i in np.unique(m)} - {0})
    out = []
    for oid in ids:
        areas = np.array([np.count_nonzero(m == oid) for m in masks])
        small = np.zeros(len(areas), dtype=bool)
        t = 0
        while t < len(areas):
            if areas[t] == 0:
                t += 1
                continue
            s = t
            while t < len(areas) and areas[t] > 0:
                t += 1
            run = ndimage.median_filter(areas[s:t].astype(float), size=window, mode="nearest")
            small[s:t] = run < area_threshold
        ranges = []
        t = 0
        while t < len(small):
            if small[t]:
                s = t
                while t < len(small) and small[t]:
                    t += 1
                ranges.append((s, t - 1))
            else:
                t += 1
        if ranges:
            out.append((oid, ranges))
    return out


@dataclass
class ZoomConfig:
    zoom: float = 4.0
    margin: float = 0.25
    area_threshold: int = 100
    track: TrackConfig = None

    def __post_init__(self):
        if self.track is None:
            self.track = TrackConfig()


def zoom_refine_sequence(frames, masks, first_mask, config=None, segmenter_config=None):
    """Track small objects from the first frame and crop-then-zoom each flagged frame.

    ``masks`` are the preliminary per-frame predictions. Frame 0 is never
    modified. Segmentation uses :class:`PropagationSegmenter` seeded with the
    first frame unless ``segmenter_config`` says otherwise.
    """
    cfg = config or ZoomConfig()
    frames = [np.asarray(f, dtype=float) for f in frames]
    out = [np.asarray(m).copy() for m in masks]
    first_mask = np.asarray(first_mask)
    seg = PropagationSegmenter(frames[0], first_mask, cfg.margin, segmenter_config)
    height, width = first_mask.shape
    for oid, ranges in small_object_select(masks, cfg.area_threshold):
        extent = mask_bbox(first_mask, oid)
        if extent is None:
            continue
        box = TrackBox(oid, 0, *extent)
        flagged = {t for s, e in ranges for t in range(s, e + 1)}
        for t in range(1, len(frames)):
            try:
                box = track_box(box, masks[t - 1], frames[t], frames[t - 1], cfg.track)
            except TrackingLost:
                extent = mask_bbox(masks[t], oid)
                if extent is None:
                    box = replace(box, frame_index=t)
                    continue
                box = TrackBox(oid, t, *extent)
            x, y, w, h = _clip_box(box.x, box.y, box.w, box.h, width, height)
            if w < 1 or h < 1:
                continue
            box = TrackBox(oid, t, x, y, w, h)
            if t in flagged:
                out[t] = crop_then_zoom(frames[t], box, cfg.zoom, seg, out[t], cfg.margin)
    return out
