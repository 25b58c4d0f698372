"""File formats: palette PNG masks, RGB frames and raw tensor containers.

Raw tensor layout (little-endian)::

    magic   4 bytes  b"VOSP"
    version u16
    dtype   u8       index into DTYPES
    rank    u8
    dims    rank x u64
    payload prod(dims) x itemsize bytes, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InputError, PayloadError

MAGIC = b"VOSP"
VERSION = 1
DTYPES = ("<u1", "<i4", "<f4", "<f8", "<i8", "<u2")
_HEADER = struct.Struct("<4sHBB")
FRAME_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")


def _palette():
    # DAVIS-style bit-interleaved colour map
    pal = []
    for i in range(256):
        r = g = b = 0
        c = i
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        pal.extend((r, g, b))
    return pal


PALETTE = _palette()


def write_tensor(path, array):
    a = np.asarray(array)
    codes = [i for i, d in enumerate(DTYPES) if np.dtype(d) == a.dtype.newbyteorder("<")]
    if not codes:
        raise FormatError(f"unsupported dtype {a.dtype}")
    tag = DTYPES[codes[0]]
    header = _HEADER.pack(MAGIC, VERSION, codes[0], a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    payload = np.ascontiguousarray(a, dtype=np.dtype(tag)).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, dtag, rank = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if dtag >= len(DTYPES):
            raise FormatError(f"{path}: unknown dtype tag {dtag}")
        raw_dims = fh.read(8 * rank)
        if len(raw_dims) < 8 * rank:
            raise FormatError(f"{path}: truncated dims")
        dims = struct.unpack(f"<{rank}Q", raw_dims)
        dtype = np.dtype(DTYPES[dtag])
        n_bytes = dtype.itemsize
        for d in dims:
            n_bytes *= d
        payload = fh.read(n_bytes + 1) if n_bytes < (1 << 40) else fh.read()
    if len(payload) < n_bytes:
        raise PayloadError(f"{path}: payload has {len(payload)} bytes, header declares {n_bytes}")
    if len(payload) > n_bytes:
        raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def write_volume(path, volume):
    write_tensor(path, np.asarray(volume, dtype=np.float64))


def read_volume(path):
    v = read_tensor(path)
    if v.ndim != 3:
        raise FormatError(f"{path}: probability volume must have rank 3, got {v.ndim}")
    return v.astype(np.float64, copy=False)


def write_mask(path, mask):
    m = np.asarray(mask)
    if m.ndim != 2 or m.min(initial=0) < 0 or m.max(initial=0) > 255:
        raise FormatError("mask must be 2-D with labels in 0..255")
    m = np.ascontiguousarray(m, dtype=np.uint8)
    img = Image.frombytes("P", (m.shape[1], m.shape[0]), m.tobytes())
    img.putpalette(PALETTE)
    img.save(path, format="PNG")


def read_mask(path):
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode mask: {exc}") from exc
    if img.mode != "P":
        raise FormatError(f"{path}: mask is not palette-indexed (mode {img.mode})")
    return np.array(img, dtype=np.uint8)


def write_frame(path, frame):
    a = np.round(np.clip(np.asarray(frame, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(a).save(path)


def read_frame(path):
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode frame: {exc}") from exc
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def list_images(directory, suffixes=FRAME_SUFFIXES):
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in suffixes)


def read_frames(directory):
    paths = list_images(directory)
    if not paths:
        raise InputError(f"no frames in {directory}")
    return [read_frame(p) for p in paths]


def read_masks(directory):
    paths = list_images(directory, (".png",))
    if not paths:
        raise InputError(f"no masks in {directory}")
    return [read_mask(p) for p in paths]


def write_masks(directory, masks):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(masks):
        write_mask(d / f"{t:05d}.png", m)


def write_frames(directory, frames):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, f in enumerate(frames):
        write_frame(d / f"{t:05d}.png", f)


def write_prediction_dir(directory, volumes, source_id="model", native_scale=1.0, flipped=False):
    """Probability-volume dump: one ``.vosp`` per frame plus ``meta.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, v in enumerate(volumes):
        write_volume(d / f"{t:05d}.vosp", v)
    meta = {"source_id": source_id, "native_scale": native_scale, "flipped": flipped}
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_prediction_dir(directory):
    """Returns ``(volumes, meta)``; missing meta defaults to scale 1, unflipped."""
    d = Path(directory)
    paths = sorted(d.glob("*.vosp"))
    if not paths:
        raise InputError(f"no probability volumes in {d}")
    meta = {"source_id": d.name, "native_scale": 1.0, "flipped": False}
    if (d / "meta.json").exists():
        try:
            meta.update(json.loads((d / "meta.json").read_text()))
        except ValueError as exc:
            raise FormatError(f"{d}/meta.json: {exc}") from exc
    return [read_volume(p) for p in paths], meta
