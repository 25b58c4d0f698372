"""Shared scenario builders for the test suite."""

import numpy as np

from voskit.fusion import PredictionSet
from voskit.propagation import one_hot_volume
from voskit.synthetic import ClipSpec, ShapeSpec, gen_synthetic


def random_volume(rng, n_planes, h, w):
    v = rng.random((n_planes, h, w)) + 1e-3
    return v / v.sum(axis=0)


def random_set(rng, name, n_frames=3, n_planes=3, h=6, w=7):
    return PredictionSet(name, [random_volume(rng, n_planes, h, w) for _ in range(n_frames)])


def textured_square_clip():
    spec = ClipSpec(32, 32, 12, [ShapeSpec(1, (0.9, 0.2, 0.1), cx=8, cy=14, size=8,
                                           vx=1.0, vy=0.25, texture=0.3)], seed=11)
    return gen_synthetic(spec)


def corrupted_sources(masks, offset=4):
    good = PredictionSet("good", [one_hot_volume(m, 2) for m in masks])
    shifted = [np.roll(m, offset, axis=1) for m in masks]
    bad = PredictionSet("shifted", [one_hot_volume(m, 2) for m in shifted])
    return good, bad


def naive_jaccard(pred, gt, oid):
    inter = union = 0
    for a, b in zip(np.asarray(pred).ravel(), np.asarray(gt).ravel()):
        pa, gb = a == oid, b == oid
        inter += bool(pa and gb)
        union += bool(pa or gb)
    return 1.0 if union == 0 else inter / union


def naive_boundary(binary):
    h, w = binary.shape
    pts = []
    for y in range(h):
        for x in range(w):
            if not binary[y, x]:
                continue
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and not binary[yy, xx]:
                    pts.append((y, x))
                    break
    return pts


def naive_boundary_f(pred, gt, oid, tol):
    pb = naive_boundary(np.asarray(pred) == oid)
    gb = naive_boundary(np.asarray(gt) == oid)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0

    def hit_fraction(src, dst):
        # a pixel matches when some target pixel lies within a Chebyshev radius of tol
        targets = set(dst)
        hits = 0
        for y, x in src:
            hits += any((y + dy, x + dx) in targets
                        for dy in range(-tol, tol + 1) for dx in range(-tol, tol + 1))
        return hits / len(src)

    p = hit_fraction(pb, gb)
    r = hit_fraction(gb, pb)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def random_blob_mask(rng, h=32, w=32, n_ids=3):
    """Random mask of a few rectangles, mimicking object-like regions."""
    m = np.zeros((h, w), np.uint8)
    for _ in range(int(rng.integers(0, 5))):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(1, h // 2), x0 + rng.integers(1, w // 2)
        m[y0:y1, x0:x1] = rng.integers(1, n_ids + 1)
    if rng.random() < 0.3:
        m[rng.random((h, w)) < 0.05] = 1
    return m
