"""Non-learned reference segmenter built on memory reads.

Frames are encoded into hand-crafted per-pixel features, the first-frame mask
seeds the memory bank and each later frame is segmented by reading object
identities out of memory. Probability volumes are indexed by label: plane
``i`` holds the score of object id ``i`` (plane 0 is background), so ids that
do not occur in the first mask own all-zero planes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import memory as mem
from .attention import LayerProjections
from .errors import CapacityError, ConfigError, ShapeError

FEATURE_DIM = 8
COLOR_CHANNELS = (0, 1, 2)
POSITION_CHANNELS = (3, 4)
LOCAL_MEAN_CHANNELS = (5, 6, 7)


@dataclass
class PropagationConfig:
    variant: str = "eq2"
    # scores are divided by sqrt(C) * temperature; features live in [0, 1],
    # so a small temperature is needed to make the read-out selective
    temperature: float = 0.01
    similarity: str = "l2"
    id_dim: int = 16
    stride: int = 1
    capacity: int = 4
    policy: str = "stride"
    short_term: bool = True
    topk: mem.TopKConfig = field(default_factory=mem.TopKConfig)
    seed: int = 0
    n_layers: int = 1
    chunk: int = 512

    def validate(self):
        if self.variant not in mem.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.similarity not in ("l2", "dot"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        return self


def check_frame(frame):
    f = np.asarray(frame, dtype=float)
    if f.ndim != 3 or f.shape[2] != 3:
        raise ShapeError(f"frame must be (H, W, 3), got {f.shape}")
    if f.shape[0] < 1 or f.shape[1] < 1:
        raise ShapeError("zero-sized frame")
    if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
        raise ShapeError("frame values must lie in [0, 1]")
    return f


def local_mean(img):
    """3x3 mean over the in-frame neighbourhood of every pixel."""
    ones = np.ones(img.shape[:2])
    counts = ndimage.uniform_filter(ones, size=3, mode="constant") * 9.0
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        sums = ndimage.uniform_filter(img[..., c], size=3, mode="constant") * 9.0
        out[..., c] = sums / counts
    return out


def encode_frame(frame):
    """Per-pixel ``[r, g, b, x/W, y/H, mean3x3(r, g, b)]`` features, shape (H, W, 8)."""
    f = check_frame(frame)
    h, w = f.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    return np.concatenate(
        [f, (xs / w)[..., None], (ys / h)[..., None], local_mean(f)], axis=2
    )


def identity_vectors(n, id_dim, seed=0):
    """``n`` orthonormal rows of length ``id_dim`` from a seeded QR draw."""
    if n > id_dim:
        raise CapacityError(f"{n} identities do not fit in dimension {id_dim}")
    rng = np.random.default_rng(seed)
    qmat, r = np.linalg.qr(rng.normal(size=(id_dim, id_dim)))
    qmat = qmat * np.sign(np.diag(r))
    return qmat[:, :n].T.copy()


def object_ids(mask):
    return [int(i) for i in np.unique(mask) if i != 0]


def build_identity(mask, id_dim, seed=0, ids=None):
    """Identity embedding per pixel token (row-major), shape (H*W, id_dim).

    Slot 0 is background; object ids take slots 1.. in ascending order of
    ``ids`` (defaults to the ids present in ``mask``).
    """
    mask = np.asarray(mask)
    ids = object_ids(mask) if ids is None else sorted(ids)
    bank = identity_vectors(len(ids) + 1, id_dim, seed)
    slots = label_slots(mask, ids)
    return bank[slots.ravel()]


def label_slots(mask, ids):
    lut = np.zeros(256, dtype=np.int64)
    for slot, i in enumerate(ids, start=1):
        lut[i] = slot
    present = set(np.unique(mask).tolist()) - {0}
    if not present <= set(ids):
        raise ShapeError(f"mask contains ids {sorted(present - set(ids))} outside the identity bank")
    return lut[np.asarray(mask, dtype=np.int64)]


def labels_from_volume(volume):
    """Per-pixel argmax label. Ties go to the lowest id; background loses ties."""
    vol = np.asarray(volume)
    if vol.shape[0] == 1:
        return np.zeros(vol.shape[1:], dtype=np.uint8)
    obj = vol[1:]
    best = np.argmax(obj, axis=0)
    best_score = np.take_along_axis(obj, best[None], axis=0)[0]
    labels = np.where(best_score >= vol[0], best + 1, 0)
    return labels.astype(np.uint8)


def one_hot_volume(mask, n_planes=None):
    mask = np.asarray(mask)
    n = int(mask.max()) + 1 if n_planes is None else n_planes
    return (np.arange(n)[:, None, None] == mask[None]).astype(float)


def downsample_frame(frame, stride):
    if stride == 1:
        return frame
    h, w = frame.shape[:2]
    hp, wp = -(-h // stride) * stride, -(-w // stride) * stride
    padded = np.pad(frame, ((0, hp - h), (0, wp - w), (0, 0)), mode="edge")
    return padded.reshape(hp // stride, stride, wp // stride, stride, 3).mean(axis=(1, 3))


def downsample_mask(mask, stride):
    if stride == 1:
        return mask
    h, w = mask.shape
    ys = np.minimum(np.arange(0, h, stride) + stride // 2, h - 1)
    xs = np.minimum(np.arange(0, w, stride) + stride // 2, w - 1)
    return mask[np.ix_(ys, xs)]


def upsample_volume(volume, stride, shape):
    if stride == 1:
        return volume
    up = np.repeat(np.repeat(volume, stride, axis=1), stride, axis=2)
    return up[:, : shape[0], : shape[1]]


class Propagator:
    """Stateful per-video segmenter; use :func:`propagate` for whole clips."""

    def __init__(self, first_frame, first_mask, config=None, video_length=None):
        self.config = (config or PropagationConfig()).validate()
        cfg = self.config
        first_frame = check_frame(first_frame)
        first_mask = np.asarray(first_mask)
        if first_mask.shape != first_frame.shape[:2]:
            raise ShapeError(
                f"first mask {first_mask.shape} does not match frame {first_frame.shape[:2]}"
            )
        self.shape = first_mask.shape
        self.ids = object_ids(first_mask)
        self.n_planes = (max(self.ids) if self.ids else 0) + 1
        n_slots = len(self.ids) + 1
        if n_slots > cfg.id_dim:
            raise CapacityError(f"{len(self.ids)} objects exceed identity dimension {cfg.id_dim}")
        self.id_bank = identity_vectors(n_slots, cfg.id_dim, cfg.seed)
        self.value_dim = FEATURE_DIM + cfg.id_dim
        self.proj = None
        self._decoder = self.id_bank.T
        if cfg.variant == "eq3":
            self.proj = self._default_projection()
            w_ii = self.proj.value_weights[FEATURE_DIM:, FEATURE_DIM:]
            self._decoder = np.linalg.pinv(self.id_bank @ w_ii)
        mode = cfg.policy
        self.bank = mem.init_bank(
            self._entry(0, first_frame, first_mask),
            cfg.capacity,
            mode,
            video_length=video_length,
            short_term=cfg.short_term,
        )
        self._t = 0

    def _default_projection(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 1)
        d = self.value_dim
        gate = np.zeros(d)
        gate[FEATURE_DIM:] = rng.normal(0.0, 0.5 / math.sqrt(cfg.id_dim), cfg.id_dim)
        w = np.zeros((d, d))
        w[FEATURE_DIM:, :] = 0.1 * rng.normal(size=(cfg.id_dim, d)) / math.sqrt(d)
        w[FEATURE_DIM:, FEATURE_DIM:] += np.eye(cfg.id_dim)
        return LayerProjections(gate, w, layer_index=0)

    def _tokens(self, frame):
        small = downsample_frame(frame, self.config.stride)
        feats = encode_frame(small).reshape(-1, FEATURE_DIM)
        return small.shape[:2], feats

    def _qk(self, feats):
        if self.config.similarity == "dot":
            return feats, feats
        sq = 0.5 * np.sum(feats * feats, axis=1, keepdims=True)
        q = np.concatenate([feats, np.ones_like(sq)], axis=1)
        k = np.concatenate([feats, -sq], axis=1)
        return q, k

    def _entry(self, t, frame, mask):
        _, feats = self._tokens(frame)
        small_mask = downsample_mask(np.asarray(mask), self.config.stride)
        ident = self.id_bank[label_slots(small_mask, self.ids).ravel()]
        n = feats.shape[0]
        ident_full = np.zeros((n, self.value_dim))
        ident_full[:, FEATURE_DIM:] = ident
        values = np.zeros((n, self.value_dim))
        values[:, :FEATURE_DIM] = feats
        if self.config.variant == "eq1":
            values[:, FEATURE_DIM:] = ident
        _, keys = self._qk(feats)
        return mem.MemoryEntry(t, keys, values, ident_full)

    def step(self, frame, append=True):
        """Segment the next frame; returns ``(mask, volume)``."""
        cfg = self.config
        frame = check_frame(frame)
        if frame.shape[:2] != self.shape:
            raise ShapeError(f"frame {frame.shape[:2]} differs from first frame {self.shape}")
        self._t += 1
        small_shape, feats = self._tokens(frame)
        q, _ = self._qk(feats)
        out = mem.read(
            self.bank, q, cfg.variant, self.proj, cfg.topk, cfg.temperature, cfg.chunk
        )
        slots = out[:, FEATURE_DIM:] @ self._decoder
        np.clip(slots, 0.0, None, out=slots)
        total = slots.sum(axis=1, keepdims=True)
        total[total == 0] = 1.0
        slots /= total
        small_vol = np.zeros((self.n_planes, slots.shape[0]))
        small_vol[0] = slots[:, 0]
        for slot, i in enumerate(self.ids, start=1):
            small_vol[i] = slots[:, slot]
        small_vol = small_vol.reshape(self.n_planes, *small_shape)
        volume = upsample_volume(small_vol, cfg.stride, self.shape)
        mask = labels_from_volume(volume)
        if append:
            self.bank.append(self._entry(self._t, frame, mask))
        return mask, volume


def propagate(frames, first_mask, config=None):
    """Segment every frame of a clip given the first-frame mask.

    Returns a list of ``(mask, volume)`` pairs; frame 0 reproduces
    ``first_mask`` with one-hot probabilities.
    """
    frames = list(frames)
    if not frames:
        raise ShapeError("need at least one frame")
    first_mask = np.asarray(first_mask, dtype=np.uint8)
    prop = Propagator(frames[0], first_mask, config, video_length=len(frames))
    results = [(first_mask.copy(), one_hot_volume(first_mask, prop.n_planes))]
    for frame in frames[1:]:
        results.append(prop.step(frame))
    return results
