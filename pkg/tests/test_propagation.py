import numpy as np
import pytest

from voskit import propagation as prop
from voskit.errors import CapacityError, ShapeError
from voskit.metrics import jaccard
from voskit.synthetic import ClipSpec, ShapeSpec, crossing_squares, gen_synthetic, moving_square


def test_encode_gray_frame():
    feats = prop.encode_frame(np.full((4, 5, 3), 0.5))
    assert feats.shape == (4, 5, 8)
    np.testing.assert_array_equal(feats[..., :3], 0.5)
    np.testing.assert_allclose(feats[..., 5:], 0.5, atol=1e-15)
    np.testing.assert_allclose(feats[0, :, 3], np.arange(5) / 5)
    np.testing.assert_allclose(feats[:, 0, 4], np.arange(4) / 4)


def test_encode_single_pixel():
    px = np.array([[[0.1, 0.7, 0.3]]])
    feats = prop.encode_frame(px)
    np.testing.assert_allclose(feats[0, 0], [0.1, 0.7, 0.3, 0.0, 0.0, 0.1, 0.7, 0.3], atol=1e-15)


def test_local_mean_sliding_window(rng):
    img = rng.random((8, 8, 3))
    feats = prop.encode_frame(img)
    expected = np.zeros((8, 8, 3))
    for y in range(8):
        for x in range(8):
            win = img[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2]
            expected[y, x] = win.reshape(-1, 3).mean(axis=0)
    np.testing.assert_allclose(feats[..., 5:], expected, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("bad", [np.zeros((0, 3, 3)), np.zeros((3, 3)), np.full((2, 2, 3), 1.5)])
def test_encode_rejects(bad):
    with pytest.raises(ShapeError):
        prop.encode_frame(bad)


def test_identity_gram():
    vecs = prop.identity_vectors(9, 16, seed=4)
    np.testing.assert_allclose(vecs @ vecs.T, np.eye(9), atol=1e-10)
    with pytest.raises(CapacityError):
        prop.identity_vectors(17, 16)


def test_identity_background_and_halves():
    bg = prop.build_identity(np.zeros((3, 3), np.uint8), 8)
    assert len(np.unique(bg, axis=0)) == 1
    halves = np.zeros((4, 4), np.uint8)
    halves[:, :2] = 1
    halves[:, 2:] = 2
    ident = prop.build_identity(halves, 8)
    assert len(np.unique(ident, axis=0)) == 2


def test_argmax_ties():
    vol = np.array([[[0.2]], [[0.4]], [[0.4]]])
    assert prop.labels_from_volume(vol)[0, 0] == 1
    vol = np.array([[[0.5]], [[0.5]], [[0.0]]])
    assert prop.labels_from_volume(vol)[0, 0] == 1


def test_single_frame():
    frames, masks = gen_synthetic(moving_square(n_frames=1))
    out = prop.propagate(frames, masks[0])
    assert len(out) == 1
    assert np.array_equal(out[0][0], masks[0])


@pytest.mark.parametrize("variant", ["eq1", "eq2", "eq3"])
def test_static_video(variant):
    spec = moving_square(n_frames=4)
    spec.shapes[0].vx = 0.0
    frames, masks = gen_synthetic(spec)
    out = prop.propagate(frames, masks[0], prop.PropagationConfig(variant=variant))
    for mask, _ in out:
        assert np.array_equal(mask, masks[0])


def test_moving_square_clip():
    frames, masks = gen_synthetic(moving_square(16, 10, 4))
    out = prop.propagate(frames, masks[0])
    assert np.array_equal(out[0][0], masks[0])
    np.testing.assert_array_equal(out[0][1], prop.one_hot_volume(masks[0]))
    for (mask, vol), gt in zip(out, masks):
        assert jaccard(mask, gt, 1) >= 0.95
        np.testing.assert_allclose(vol.sum(axis=0), 1.0, atol=1e-6)
        assert vol.min() >= 0.0 and vol.max() <= 1.0


def test_label_closure_and_determinism():
    frames, masks = gen_synthetic(crossing_squares())
    first = masks[0].copy()
    first[first == 2] = 5
    a = prop.propagate(frames, first)
    b = prop.propagate(frames, first)
    for (ma, va), (mb, vb) in zip(a, b):
        assert set(np.unique(ma).tolist()) <= {0, 1, 5}
        assert np.array_equal(ma, mb) and np.array_equal(va, vb)


def test_id_permutation_equivariance():
    frames, masks = gen_synthetic(crossing_squares(n_frames=6))
    first = masks[0]
    swapped = np.where(first == 1, 2, np.where(first == 2, 1, 0)).astype(np.uint8)
    a = prop.propagate(frames, first)
    b = prop.propagate(frames, swapped)
    for (ma, _), (mb, _) in zip(a, b):
        mapped = np.where(ma == 1, 2, np.where(ma == 2, 1, 0))
        assert np.array_equal(mapped, mb)


def test_stride_shapes():
    spec = ClipSpec(15, 13, 3, [ShapeSpec(1, cx=6, cy=6, size=5)], seed=1)
    frames, masks = gen_synthetic(spec)
    out = prop.propagate(frames, masks[0], prop.PropagationConfig(stride=2))
    for mask, vol in out:
        assert mask.shape == (13, 15) and vol.shape == (2, 13, 15)


def test_dimension_drift():
    frames, masks = gen_synthetic(moving_square(n_frames=3))
    frames[2] = frames[2][:-1]
    with pytest.raises(ShapeError):
        prop.propagate(frames, masks[0])
