"""Merging predictions across test-time augmentations and models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError
from .propagation import labels_from_volume

DEFAULT_SCALES = (1.2, 1.3, 1.4)


@dataclass
class PredictionSet:
    source_id: str
    volumes: list
    native_scale: float = 1.0
    flipped: bool = False

    @property
    def n_planes(self):
        return self.volumes[0].shape[0]


@dataclass(frozen=True)
class KeypointMatch:
    point_a: tuple  # (x, y)
    point_b: tuple
    score: float


@dataclass
class MatchConfig:
    patch_radius: int = 3
    nms_radius: int = 2
    min_response: float = 1e-4
    rel_response: float = 0.01
    ratio: float = 0.8
    max_keypoints: int = 256
    max_displacement: float | None = None


def _axis_coords(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(arr, size):
    """Half-pixel bilinear resize of the last two axes to ``size = (h, w)``."""
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"cannot resize to {size}")
    a = np.asarray(arr, dtype=float)
    if a.shape[-2:] == (h, w):
        return a.copy()
    i0, i1, f = _axis_coords(a.shape[-2], h)
    a = a[..., i0, :] * (1.0 - f)[:, None] + a[..., i1, :] * f[:, None]
    j0, j1, g = _axis_coords(a.shape[-1], w)
    return a[..., j0] * (1.0 - g) + a[..., j1] * g


def resize_nearest(arr, size):
    """Half-pixel nearest-neighbour resize of the first two axes."""
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"cannot resize to {size}")
    a = np.asarray(arr)
    ys = np.minimum(((np.arange(h) + 0.5) * a.shape[0] / h).astype(int), a.shape[0] - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * a.shape[1] / w).astype(int), a.shape[1] - 1)
    return a[ys][:, xs]


def renormalize(volume, atol=1e-12):
    """Rescale pixels whose planes do not sum to 1; empty pixels become background."""
    v = np.clip(np.asarray(volume, dtype=float), 0.0, None)
    total = v.sum(axis=0)
    bad = np.abs(total - 1.0) > atol
    if not np.any(bad):
        return v
    empty = total <= 0
    safe = np.where(empty, 1.0, total)
    v = np.where(bad[None], v / safe[None], v)
    if np.any(empty):
        v[0][empty] = 1.0
    return v


def normalize_prediction(pset, reference_size):
    """Bring a prediction set to ``reference_size`` (h, w), unflipped."""
    h, w = reference_size
    if h < 1 or w < 1:
        raise ShapeError(f"reference size {reference_size} has zero area")
    vols = []
    for v in pset.volumes:
        v = np.asarray(v, dtype=float)
        if pset.flipped:
            v = v[..., ::-1]
        vols.append(renormalize(resize_bilinear(v, (h, w))))
    return replace(pset, volumes=vols, native_scale=1.0, flipped=False)


def _check_congruent(sets):
    if not sets:
        raise ConfigError("need at least one prediction set")
    n = len(sets[0].volumes)
    shape = sets[0].volumes[0].shape
    for s in sets:
        if len(s.volumes) != n:
            raise ShapeError(f"source {s.source_id} has {len(s.volumes)} frames, expected {n}")
        for v in s.volumes:
            if v.shape != shape:
                raise ShapeError(f"source {s.source_id} volume {v.shape} != {shape}")
    return n


def _combine(stack, weights):
    """``base + sum_i w_i (x_i - base)`` with base the per-element minimum.

    Identical inputs reproduce the input bit-exactly; terms are summed in
    sorted order so equal weights make the result order-independent.
    """
    base = stack.min(axis=0)
    terms = (stack - base[None]) * np.asarray(weights, dtype=float)[:, None, None, None]
    terms.sort(axis=0)
    return renormalize(base + terms.sum(axis=0))


def fuse_average(sets):
    n = _check_congruent(sets)
    w = np.full(len(sets), 1.0 / len(sets))
    return [_combine(np.stack([s.volumes[t] for s in sets]), w) for t in range(n)]


def fuse_max(sets):
    n = _check_congruent(sets)
    return [renormalize(np.max([s.volumes[t] for s in sets], axis=0)) for t in range(n)]


def _as_grid(feat):
    g = np.asarray(feat, dtype=float)
    if g.ndim == 2:
        g = g[..., None]
    if g.ndim != 3:
        raise ShapeError(f"feature grid must be (H, W, C), got {g.shape}")
    return g


def detect_corners(grid, config):
    """Local maxima of the minimum structure-tensor eigenvalue, as (x, y)."""
    r = config.patch_radius
    h, w, _ = grid.shape
    gy, gx = np.gradient(grid, axis=(0, 1))
    jxx = ndimage.uniform_filter((gx * gx).sum(axis=2), size=3, mode="nearest")
    jyy = ndimage.uniform_filter((gy * gy).sum(axis=2), size=3, mode="nearest")
    jxy = ndimage.uniform_filter((gx * gy).sum(axis=2), size=3, mode="nearest")
    resp = 0.5 * (jxx + jyy) - np.sqrt(0.25 * (jxx - jyy) ** 2 + jxy ** 2)
    peak = resp.max(initial=0.0)
    thresh = max(config.min_response, config.rel_response * peak)
    local_max = ndimage.maximum_filter(resp, size=2 * config.nms_radius + 1, mode="nearest")
    keep = (resp == local_max) & (resp > thresh)
    keep[:r, :] = keep[h - r:, :] = False
    keep[:, :r] = keep[:, w - r:] = False
    ys, xs = np.nonzero(keep)
    order = np.lexsort((xs, ys, -resp[ys, xs]))[: config.max_keypoints]
    return [(int(xs[i]), int(ys[i])) for i in order]


def describe(grid, points, radius):
    """Mean-free, L2-normalised patch vectors; returns descriptors and kept points."""
    descs, kept = [], []
    for x, y in points:
        patch = grid[y - radius:y + radius + 1, x - radius:x + radius + 1].ravel()
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm > 1e-12:
            descs.append(patch / norm)
            kept.append((x, y))
    d = grid.shape[2] * (2 * radius + 1) ** 2
    return (np.array(descs) if descs else np.zeros((0, d))), kept


def match_keypoints(feat_a, feat_b, config=None):
    """Corner detection in both grids, NCC descriptors, mutual-best + ratio test."""
    cfg = config or MatchConfig()
    a = _as_grid(feat_a)
    b = _as_grid(feat_b)
    if a.shape[2] != b.shape[2]:
        raise ShapeError(f"channel mismatch {a.shape[2]} vs {b.shape[2]}")
    side = 2 * cfg.patch_radius + 1
    if min(a.shape[:2] + b.shape[:2]) < side:
        raise ShapeError(f"grid smaller than patch size {side}")
    da, pa = describe(a, detect_corners(a, cfg), cfg.patch_radius)
    db, pb = describe(b, detect_corners(b, cfg), cfg.patch_radius)
    if not pa or not pb:
        return []
    sim = da @ db.T
    if cfg.max_displacement is not None:
        ca = np.array(pa, dtype=float)
        cb = np.array(pb, dtype=float)
        dist = np.linalg.norm(ca[:, None] - cb[None], axis=2)
        sim = np.where(dist <= cfg.max_displacement, sim, -np.inf)
    best_b = np.argmax(sim, axis=1)
    best_a = np.argmax(sim, axis=0)
    matches = []
    for i, j in enumerate(best_b):
        s1 = sim[i, j]
        if not np.isfinite(s1) or best_a[j] != i:
            continue
        if sim.shape[1] > 1:
            row = np.delete(sim[i], j)
            s2 = row.max()
            if np.isfinite(s2):
                d1 = np.sqrt(max(0.0, 2.0 - 2.0 * s1))
                d2 = np.sqrt(max(0.0, 2.0 - 2.0 * s2))
                if not d1 < cfg.ratio * d2:
                    continue
        matches.append(KeypointMatch(pa[i], pb[j], float(np.clip(s1, -1.0, 1.0))))
    matches.sort(key=lambda m: (-m.score, m.point_a[1], m.point_a[0]))
    return matches


@dataclass
class VotingResult:
    volumes: list
    weights: list = field(default_factory=list)  # per frame, one weight per source


def source_quality(matches, prev_mask, label_map):
    """Mean over objects of the fraction of transported keypoints inside the object."""
    per_obj = {}
    for m in matches:
        xa, ya = m.point_a
        oid = int(prev_mask[ya, xa])
        if oid == 0:
            continue
        xb, yb = m.point_b
        hits = per_obj.setdefault(oid, [0, 0])
        hits[0] += int(label_map[yb, xb] == oid)
        hits[1] += 1
    if not per_obj:
        return None
    return float(np.mean([h / n for h, n in per_obj.values()]))


def voting_weights(qualities):
    q = np.asarray(qualities, dtype=float)
    total = q.sum()
    if total <= 0:
        return np.full(len(q), 1.0 / len(q))
    return q / total


def fuse_keypoint_voting(sets, prev_masks=None, frames=None, config=None, return_weights=False):
    """Weight sources per frame by how well tracked object keypoints land in their masks.

    ``prev_masks[t - 1]`` supplies the previous-frame object layout for frame
    ``t``; when ``prev_masks`` is None the running fused result is used.
    ``frames`` are the reference-resolution images the keypoints are matched
    on. Frame 0 is fused with uniform weights.
    """
    if len(sets) < 2:
        raise ConfigError("keypoint voting needs at least two sources")
    n = _check_congruent(sets)
    if frames is None or len(frames) != n:
        raise ShapeError("keypoint voting needs one frame per fused volume")
    cfg = config or MatchConfig()
    uniform = np.full(len(sets), 1.0 / len(sets))
    out, weights = [], []
    for t in range(n):
        stack = np.stack([s.volumes[t] for s in sets])
        w = uniform
        if t > 0:
            prev = prev_masks[t - 1] if prev_masks is not None else labels_from_volume(out[-1])
            matches = match_keypoints(frames[t - 1], frames[t], cfg)
            quals = []
            for s in sets:
                qv = source_quality(matches, prev, labels_from_volume(s.volumes[t]))
                quals.append(0.0 if qv is None else qv)
            if source_quality(matches, prev, prev) is not None:
                w = voting_weights(quals)
        keep = w > 0
        out.append(_combine(stack[keep], w[keep] / w[keep].sum()))
        weights.append(w)
    if return_weights:
        return VotingResult(out, weights)
    return out


FUSERS = {"average": fuse_average, "max": fuse_max, "keypoint-vote": fuse_keypoint_voting}
