import struct

import numpy as np
import pytest
from PIL import Image

from voskit import fileio
from voskit.errors import FormatError, InputError, PayloadError


def test_mask_round_trip(tmp_path, rng):
    m = rng.integers(0, 256, size=(9, 13)).astype(np.uint8)
    fileio.write_mask(tmp_path / "m.png", m)
    assert np.array_equal(fileio.read_mask(tmp_path / "m.png"), m)


def test_zero_mask(tmp_path):
    fileio.write_mask(tmp_path / "z.png", np.zeros((4, 4), np.uint8))
    assert not fileio.read_mask(tmp_path / "z.png").any()


def test_mask_id_set(tmp_path):
    m = np.zeros((6, 6), np.uint8)
    m[0, :2], m[2, 2], m[5, 5] = 1, 3, 7
    fileio.write_mask(tmp_path / "ids.png", m)
    assert set(np.unique(fileio.read_mask(tmp_path / "ids.png")).tolist()) == {0, 1, 3, 7}


def test_non_palette_rejected(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(FormatError):
        fileio.read_mask(tmp_path / "rgb.png")


@pytest.mark.parametrize("dtype", ["<u1", "<i4", "<f4", "<f8", "<i8", "<u2"])
def test_tensor_round_trip(tmp_path, rng, dtype):
    a = (rng.random((2, 3, 4)) * 100).astype(dtype)
    fileio.write_tensor(tmp_path / "a.vosp", a)
    b = fileio.read_tensor(tmp_path / "a.vosp")
    assert b.dtype == a.dtype and np.array_equal(a, b)


def test_volume_round_trip(tmp_path, rng):
    v = rng.random((3, 5, 7))
    fileio.write_volume(tmp_path / "v.vosp", v)
    assert fileio.read_volume(tmp_path / "v.vosp").tobytes() == v.tobytes()


def test_bad_magic(tmp_path, rng):
    p = tmp_path / "v.vosp"
    fileio.write_volume(p, rng.random((1, 2, 2)))
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        fileio.read_volume(p)


def test_bad_version(tmp_path, rng):
    p = tmp_path / "v.vosp"
    fileio.write_volume(p, rng.random((1, 2, 2)))
    raw = bytearray(p.read_bytes())
    raw[4:6] = struct.pack("<H", 9)
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        fileio.read_volume(p)


def test_truncated_payload(tmp_path, rng):
    p = tmp_path / "v.vosp"
    fileio.write_volume(p, rng.random((2, 3, 3)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(PayloadError):
        fileio.read_volume(p)
    with pytest.raises(OSError):
        fileio.read_volume(p)


def test_dims_exceed_payload(tmp_path):
    p = tmp_path / "huge.vosp"
    header = struct.pack("<4sHBB", b"VOSP", 1, 3, 3) + struct.pack("<3Q", 2**40, 2**40, 2**40)
    p.write_bytes(header + b"\0" * 64)
    with pytest.raises(PayloadError):
        fileio.read_volume(p)


def test_frames_and_prediction_dir(tmp_path, rng):
    frames = [np.round(rng.random((4, 5, 3)) * 255) / 255 for _ in range(3)]
    fileio.write_frames(tmp_path / "f", frames)
    for a, b in zip(frames, fileio.read_frames(tmp_path / "f")):
        np.testing.assert_allclose(a, b, atol=1e-12)
    vols = [rng.random((2, 4, 5)) for _ in range(3)]
    fileio.write_prediction_dir(tmp_path / "p", vols, "s1", 1.2, True)
    back, meta = fileio.read_prediction_dir(tmp_path / "p")
    assert meta == {"source_id": "s1", "native_scale": 1.2, "flipped": True}
    assert all(np.array_equal(a, b) for a, b in zip(vols, back))


def test_missing_dir(tmp_path):
    with pytest.raises(InputError):
        fileio.read_frames(tmp_path / "nope")
