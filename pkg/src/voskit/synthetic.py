"""Deterministic synthetic clips with exact ground-truth masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError


def round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass
class ShapeSpec:
    """A rigid square or disk. ``cx, cy`` is the centre at frame 0."""

    object_id: int
    color: tuple = (0.9, 0.1, 0.1)
    cx: float = 8.0
    cy: float = 8.0
    size: int = 4
    end_size: int | None = None
    vx: float = 0.0
    vy: float = 0.0
    kind: str = "square"
    z: int = 0
    texture: float = 0.0

    def size_at(self, t, n_frames):
        if self.end_size is None or n_frames == 1:
            return self.size
        return round_half_up(self.size + (self.end_size - self.size) * t / (n_frames - 1))

    def box_at(self, t, n_frames):
        """Top-left (x, y) and side length at frame ``t``."""
        s = self.size_at(t, n_frames)
        x0 = round_half_up(self.cx + self.vx * t - s / 2.0)
        y0 = round_half_up(self.cy + self.vy * t - s / 2.0)
        return x0, y0, s


@dataclass
class ClipSpec:
    width: int = 16
    height: int = 16
    n_frames: int = 10
    shapes: list = field(default_factory=list)
    seed: int = 0
    background: float = 0.2
    background_noise: float = 0.08


def _quantize(a):
    return np.round(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


def _footprint(kind, s):
    if kind == "square":
        return np.ones((s, s), dtype=bool)
    if kind == "disk":
        c = (s - 1) / 2.0
        yy, xx = np.mgrid[0:s, 0:s]
        return (xx - c) ** 2 + (yy - c) ** 2 <= (s / 2.0) ** 2
    raise SpecError(f"unknown shape kind {kind!r}")


def gen_synthetic(spec):
    """Render ``spec``; returns ``(frames, masks)`` lists.

    Frames are float arrays (H, W, 3) quantised to multiples of 1/255, masks
    are uint8 label arrays. Shapes are painted in ascending ``z`` so the
    highest ``z`` owns overlap pixels.
    """
    if spec.width < 1 or spec.height < 1 or spec.n_frames < 1:
        raise SpecError("clip dimensions and frame count must be positive")
    ids = [s.object_id for s in spec.shapes]
    if len(set(ids)) != len(ids) or any(not 1 <= i <= 255 for i in ids):
        raise SpecError(f"object ids must be unique and in 1..255, got {ids}")
    rng = np.random.default_rng(spec.seed)
    bg = spec.background + spec.background_noise * (
        rng.random((spec.height, spec.width, 3)) - 0.5
    )
    bg = _quantize(bg)
    textures = {}
    for shp in spec.shapes:
        side = max(shp.size, shp.end_size or 0)
        textures[shp.object_id] = shp.texture * (rng.random((side, side, 3)) - 0.5)

    order = sorted(spec.shapes, key=lambda s: (s.z, s.object_id))
    frames, masks = [], []
    for t in range(spec.n_frames):
        img = bg.copy()
        mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for shp in order:
            x0, y0, s = shp.box_at(t, spec.n_frames)
            if s < 1:
                raise SpecError(f"object {shp.object_id} has side {s} at frame {t}")
            if x0 < 0 or y0 < 0 or x0 + s > spec.width or y0 + s > spec.height:
                raise SpecError(f"object {shp.object_id} leaves the frame at t={t}")
            foot = _footprint(shp.kind, s)
            tex = textures[shp.object_id]
            idx = (np.arange(s) * tex.shape[0]) // s
            patch = _quantize(np.asarray(shp.color, dtype=float) + tex[np.ix_(idx, idx)])
            region = img[y0:y0 + s, x0:x0 + s]
            region[foot] = patch[foot]
            mask[y0:y0 + s, x0:x0 + s][foot] = shp.object_id
        frames.append(img)
        masks.append(mask)
    return frames, masks


def moving_square(size=16, n_frames=10, side=4, seed=0):
    """One solid square moving one pixel per frame to the right."""
    return ClipSpec(
        width=size,
        height=size,
        n_frames=n_frames,
        seed=seed,
        shapes=[ShapeSpec(1, (0.9, 0.15, 0.1), cx=side / 2 + 1, cy=size / 2, size=side, vx=1.0)],
    )


def moving_square_suite():
    """Five translating-square clips between 16 and 64 pixels."""
    clips = []
    plan = [(16, 10, 4), (24, 14, 5), (32, 20, 6), (48, 16, 8), (64, 16, 10)]
    for i, (size, n, side) in enumerate(plan):
        vx, vy = (1.0, 0.0) if i % 2 == 0 else (1.0, 0.5)
        shapes = [
            ShapeSpec(1, (0.9, 0.15, 0.1), cx=side / 2 + 1, cy=size / 3, size=side, vx=vx, vy=vy),
        ]
        if size >= 32:
            shapes.append(
                ShapeSpec(
                    2, (0.1, 0.3, 0.95), cx=size - side / 2 - 2, cy=2 * size / 3,
                    size=side, vx=-0.5, vy=0.0, kind="disk",
                )
            )
        clips.append(ClipSpec(size, size, n, shapes, seed=100 + i))
    return clips


def shrinking_object(size=64, n_frames=12, start=8, end=2, seed=7):
    """A square shrinking from ``start`` to ``end`` pixels next to a large object."""
    return ClipSpec(
        width=size,
        height=size,
        n_frames=n_frames,
        seed=seed,
        shapes=[
            ShapeSpec(1, (0.95, 0.85, 0.1), cx=21.0, cy=25.0, size=start, end_size=end, vx=0.5),
            ShapeSpec(2, (0.1, 0.3, 0.95), cx=44.0, cy=44.0, size=14, vy=-0.25),
        ],
    )


def crossing_squares(size=32, n_frames=12, seed=3):
    """Two squares swapping sides; object 2 passes in front of object 1."""
    return ClipSpec(
        width=size,
        height=size,
        n_frames=n_frames,
        seed=seed,
        shapes=[
            ShapeSpec(1, (0.9, 0.15, 0.1), cx=6.0, cy=size / 2, size=6, vx=1.5, z=0),
            ShapeSpec(2, (0.1, 0.8, 0.2), cx=size - 6.0, cy=size / 2 + 1, size=6, vx=-1.5, z=1),
        ],
    )


SUITES = {
    "moving": moving_square_suite,
    "shrinking": lambda: [shrinking_object()],
    "crossing": lambda: [crossing_squares()],
}
