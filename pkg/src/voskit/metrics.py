"""Region similarity J, boundary F-measure and the four-way overall score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, ShapeError


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def jaccard(pred, gt, object_id):
    pred, gt = _pair(pred, gt)
    a = pred == object_id
    b = gt == object_id
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def boundary_map(binary):
    """Foreground pixels with a 4-neighbour outside the foreground.

    Out-of-frame positions are not neighbours, so an all-foreground mask has
    no boundary.
    """
    b = np.asarray(binary, dtype=bool)
    edge = np.zeros_like(b)
    edge[1:, :] |= b[1:, :] != b[:-1, :]
    edge[:-1, :] |= b[:-1, :] != b[1:, :]
    edge[:, 1:] |= b[:, 1:] != b[:, :-1]
    edge[:, :-1] |= b[:, :-1] != b[:, 1:]
    return edge & b


def default_tolerance(shape):
    """0.8% of the image diagonal, rounded up."""
    return math.ceil(0.008 * math.hypot(*shape[:2]))


def boundary_f(pred, gt, object_id, tolerance_px=None):
    """Boundary F-measure with a square (Chebyshev) matching tolerance."""
    pred, gt = _pair(pred, gt)
    tol = default_tolerance(gt.shape) if tolerance_px is None else int(tolerance_px)
    if tol < 0:
        raise ConfigError("tolerance must be >= 0")
    pb = boundary_map(pred == object_id)
    gb = boundary_map(gt == object_id)
    n_p = np.count_nonzero(pb)
    n_g = np.count_nonzero(gb)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    if tol > 0:
        se = np.ones((2 * tol + 1, 2 * tol + 1), dtype=bool)
        gd = ndimage.binary_dilation(gb, structure=se)
        pd = ndimage.binary_dilation(pb, structure=se)
    else:
        gd, pd = gb, pb
    precision = np.count_nonzero(pb & gd) / n_p
    recall = np.count_nonzero(gb & pd) / n_g
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def overall_score(j_seen, j_unseen, f_seen, f_unseen):
    vals = (j_seen, j_unseen, f_seen, f_unseen)
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"score {v} outside [0, 1]")
    return math.fsum(vals) / 4.0


@dataclass
class EvalConfig:
    tolerance_px: int | None = None
    frames: list | None = None  # annotated frame subset; None = all
    skip_first: bool = False


@dataclass
class ScoreReport:
    per_object: dict = field(default_factory=dict)  # id -> (J, F)
    j_seen: float | None = None
    j_unseen: float | None = None
    f_seen: float | None = None
    f_unseen: float | None = None
    overall: float | None = None

    def records(self):
        """Flat key/value records: one per object, then the aggregates."""
        out = []
        for oid in sorted(self.per_object):
            j, f = self.per_object[oid]
            out.append({"kind": "object", "object_id": oid, "J": j, "F": f})
        out.append(
            {
                "kind": "aggregate",
                "J_seen": self.j_seen,
                "J_unseen": self.j_unseen,
                "F_seen": self.f_seen,
                "F_unseen": self.f_unseen,
                "overall": self.overall,
            }
        )
        return out

    def table(self):
        def fmt(v):
            return "  -  " if v is None else f"{v:.3f}"

        lines = ["object      J      F"]
        for oid in sorted(self.per_object):
            j, f = self.per_object[oid]
            lines.append(f"{oid:>6}  {j:.3f}  {f:.3f}")
        lines.append("")
        lines.append("Overall  J_seen  J_unseen  F_seen  F_unseen")
        lines.append(
            f"{fmt(self.overall):>7}  {fmt(self.j_seen):>6}  {fmt(self.j_unseen):>8}"
            f"  {fmt(self.f_seen):>6}  {fmt(self.f_unseen):>8}"
        )
        return "\n".join(lines)


def _mean(xs):
    return math.fsum(xs) / len(xs) if xs else None


def evaluate_sequence(preds, gts, seen_ids=None, unseen_ids=None, config=None):
    """Score a predicted clip against ground truth.

    Each object is scored on the frames from its first ground-truth
    appearance onwards (restricted to ``config.frames``). Object scores are
    averaged per category; objects in neither list count as seen. An empty
    category leaves its aggregates as ``None`` and ``overall`` averages the
    aggregates that exist.
    """
    cfg = config or EvalConfig()
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions for {len(gts)} ground-truth frames")
    seen = set(seen_ids or ())
    unseen = set(unseen_ids or ())
    if seen & unseen:
        raise ConfigError(f"objects {sorted(seen & unseen)} are both seen and unseen")
    frames = range(len(gts)) if cfg.frames is None else sorted(cfg.frames)

    ids = sorted({int(i) for g in gts for i in np.unique(g)} - {0})
    report = ScoreReport()
    for oid in ids:
        first = next(t for t, g in enumerate(gts) if np.any(np.asarray(g) == oid))
        start = first + 1 if cfg.skip_first else first
        ts = [t for t in frames if t >= start]
        if not ts:
            continue
        js = [jaccard(preds[t], gts[t], oid) for t in ts]
        fs = [boundary_f(preds[t], gts[t], oid, cfg.tolerance_px) for t in ts]
        report.per_object[oid] = (_mean(js), _mean(fs))

    seen_objs = [o for o in report.per_object if o not in unseen]
    unseen_objs = [o for o in report.per_object if o in unseen]
    report.j_seen = _mean([report.per_object[o][0] for o in seen_objs])
    report.f_seen = _mean([report.per_object[o][1] for o in seen_objs])
    report.j_unseen = _mean([report.per_object[o][0] for o in unseen_objs])
    report.f_unseen = _mean([report.per_object[o][1] for o in unseen_objs])
    parts = [v for v in (report.j_seen, report.j_unseen, report.f_seen, report.f_unseen)
             if v is not None]
    if len(parts) == 4:
        report.overall = overall_score(*parts)
    elif parts:
        report.overall = _mean(parts)
    return report
