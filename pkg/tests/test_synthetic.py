import numpy as np
import pytest

from voskit.errors import SpecError
from voskit.synthetic import (ClipSpec, ShapeSpec, crossing_squares, gen_synthetic,
                              moving_square_suite, round_half_up, shrinking_object)


def test_zero_motion_frames_identical():
    spec = ClipSpec(16, 16, 5, [ShapeSpec(1, cx=8, cy=8, size=4)], seed=2)
    frames, masks = gen_synthetic(spec)
    assert all(np.array_equal(f, frames[0]) for f in frames)
    assert all(np.array_equal(m, masks[0]) for m in masks)


def test_crossing_z_order():
    spec = crossing_squares()
    frames, masks = gen_synthetic(spec)
    overlaps = 0
    for t in range(spec.n_frames):
        fp = {}
        for shp in spec.shapes:
            x0, y0, s = shp.box_at(t, spec.n_frames)
            m = np.zeros(masks[t].shape, bool)
            m[y0:y0 + s, x0:x0 + s] = True
            fp[shp.object_id] = m
        both = fp[1] & fp[2]
        overlaps += both.sum()
        assert np.all(masks[t][both] == 2)
    assert overlaps > 0


def test_shrinking_area_formula():
    spec = shrinking_object()
    _, masks = gen_synthetic(spec)
    n = spec.n_frames
    for t, m in enumerate(masks):
        side = round_half_up(8 + (2 - 8) * t / (n - 1))
        assert np.count_nonzero(m == 1) == side * side
    assert np.count_nonzero(masks[0] == 1) == 64
    assert np.count_nonzero(masks[-1] == 1) == 4


def test_escape_raises():
    with pytest.raises(SpecError):
        gen_synthetic(ClipSpec(8, 8, 5, [ShapeSpec(1, cx=4, cy=4, size=3, vx=2)]))


def test_deterministic_and_quantized():
    a, _ = gen_synthetic(crossing_squares())
    b, _ = gen_synthetic(crossing_squares())
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.array_equal(np.round(a[0] * 255) / 255, a[0])


def test_suite_shape():
    suite = moving_square_suite()
    assert len(suite) >= 5
    sizes = [c.width for c in suite]
    assert min(sizes) == 16 and max(sizes) == 64
    assert all(10 <= c.n_frames <= 30 for c in suite)
