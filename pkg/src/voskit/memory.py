"""External memory of past frames with sampling policies and top-k reads."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attention as att
from .attention import topk_filter  # noqa: F401  (re-exported)
from .errors import ConfigError, FormatError, OrderingError, ShapeError, StateError

POLICIES = ("keep-all", "stride", "first-plus-stride")
VARIANTS = ("eq1", "eq2", "eq3")


@dataclass(frozen=True)
class MemoryEntry:
    frame_index: int
    keys: np.ndarray
    values: np.ndarray
    identity: np.ndarray | None = None

    def __post_init__(self):
        k = np.asarray(self.keys, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 2 or v.ndim != 2 or k.shape[0] != v.shape[0]:
            raise ShapeError(f"keys {k.shape} / values {v.shape} token counts differ")
        object.__setattr__(self, "keys", k)
        object.__setattr__(self, "values", v)
        if self.identity is not None:
            e = np.asarray(self.identity, dtype=float)
            if e.ndim != 2 or e.shape[0] != k.shape[0]:
                raise ShapeError(f"identity {e.shape} does not cover {k.shape[0]} tokens")
            object.__setattr__(self, "identity", e)

    @property
    def n_tokens(self):
        return self.keys.shape[0]


@dataclass(frozen=True)
class TopKConfig:
    k: int = 1
    enabled: bool = False


def stride_for(video_length, capacity):
    """Sampling stride of the first-plus-stride policy."""
    if video_length <= capacity:
        return 1
    return math.ceil(video_length / capacity)


class MemoryBank:
    """Ordered store of past-frame (key, value, identity) entries.

    Entry 0 is the annotated first frame and is never evicted. Besides the
    long-term ``entries`` the bank keeps the most recently appended frame as a
    short-term slot when ``short_term`` is set; it is read together with the
    long-term entries but does not count towards ``capacity``.
    """

    def __init__(self, first, capacity, policy="keep-all", video_length=None, short_term=False):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        if policy not in POLICIES:
            raise ConfigError(f"unknown sampling policy {policy!r}")
        if policy == "first-plus-stride" and video_length is None:
            raise ConfigError("first-plus-stride needs the video length")
        self.capacity = int(capacity)
        self.policy = policy
        self.video_length = video_length
        self.short_term = short_term
        self.entries = [first]
        self.latest = None
        self._last_index = first.frame_index

    def __len__(self):
        return len(self.entries)

    @property
    def frame_indices(self):
        return [e.frame_index for e in self.entries]

    @property
    def stride(self):
        if self.policy != "first-plus-stride":
            return 1
        return stride_for(self.video_length, self.capacity)

    def append(self, entry):
        if entry.frame_index <= self._last_index:
            raise OrderingError(
                f"frame {entry.frame_index} not after last stored frame {self._last_index}"
            )
        self._last_index = entry.frame_index
        first = self.entries[0].frame_index
        admit = True
        if self.policy == "first-plus-stride":
            admit = (entry.frame_index - first) % self.stride == 0
        if admit:
            self.entries.append(entry)
            while len(self.entries) > self.capacity:
                self._evict()
        if self.short_term:
            retained = any(e is entry for e in self.entries)
            self.latest = None if retained else entry
        return self

    def _evict(self):
        n = len(self.entries)
        if n <= 2:
            # capacity 1: only the pinned first frame fits
            del self.entries[-1]
            return
        if self.policy == "keep-all":
            del self.entries[1]
            return
        # interior entry whose removal leaves the smallest gap; newest is kept
        idx = [e.frame_index for e in self.entries]
        best, best_gap = None, None
        for i in range(1, n - 1):
            gap = idx[i + 1] - idx[i - 1]
            if best_gap is None or gap < best_gap:
                best, best_gap = i, gap
        del self.entries[best]

    def tokens(self):
        """Concatenated keys, values and identities over all readable entries."""
        ents = list(self.entries)
        if self.latest is not None:
            ents.append(self.latest)
        keys = np.concatenate([e.keys for e in ents], axis=0)
        values = np.concatenate([e.values for e in ents], axis=0)
        if any(e.identity is None for e in ents):
            identity = None
        else:
            identity = np.concatenate([e.identity for e in ents], axis=0)
        return keys, values, identity

    @property
    def n_tokens(self):
        n = sum(e.n_tokens for e in self.entries)
        return n + (self.latest.n_tokens if self.latest is not None else 0)


def init_bank(first_entry, capacity, policy="keep-all", video_length=None, short_term=False):
    return MemoryBank(first_entry, capacity, policy, video_length, short_term)


def append_frame(bank, entry):
    return bank.append(entry)


def read(bank, q, variant="eq1", proj=None, topk=None, temperature=1.0, chunk=None):
    """Attend from query tokens ``q`` to every token held in ``bank``.

    ``variant`` selects plain attention (eq1), identity-augmented values (eq2)
    or gated keys with projected identities (eq3). Rows are processed in
    blocks of ``chunk`` queries to bound the score-matrix footprint.
    """
    if bank is None or len(bank.entries) == 0:
        raise StateError("cannot read from an empty memory bank")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown attention variant {variant!r}")
    q = np.asarray(q, dtype=float)
    keys, values, identity = bank.tokens()
    if q.ndim != 2 or q.shape[1] != keys.shape[1]:
        raise ShapeError(f"query shape {q.shape} incompatible with key dim {keys.shape[1]}")
    k_sel = None
    if topk is not None and topk.enabled:
        if not 1 <= topk.k <= keys.shape[0]:
            raise ConfigError(f"top-k k={topk.k} outside [1, {keys.shape[0]}]")
        k_sel = topk.k
    if variant == "eq1":
        k_eff, v_eff = keys, values
    elif identity is None:
        raise StateError(f"variant {variant} needs identity embeddings in memory")
    elif variant == "eq2":
        if identity.shape != values.shape:
            raise ShapeError(f"identity {identity.shape} vs values {values.shape}")
        k_eff, v_eff = keys, values + identity
    else:
        if proj is None:
            raise ConfigError("variant eq3 needs layer projections")
        k_eff, _ = att.gate_keys(keys, identity, proj)
        v_eff = att.augment_values(values, identity, proj)
    if chunk is None or chunk >= q.shape[0]:
        return att.attend(q, k_eff, v_eff, temperature, k_sel)
    out = np.empty((q.shape[0], v_eff.shape[1]))
    for s in range(0, q.shape[0], chunk):
        out[s:s + chunk] = att.attend(q[s:s + chunk], k_eff, v_eff, temperature, k_sel)
    return out


def save_bank(bank, directory):
    """Dump bank contents as raw tensor files plus a JSON index."""
    from .fileio import write_tensor

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ents = list(bank.entries) + ([bank.latest] if bank.latest is not None else [])
    index = {
        "capacity": bank.capacity,
        "policy": bank.policy,
        "video_length": bank.video_length,
        "short_term": bank.short_term,
        "last_index": bank._last_index,
        "entries": [],
        "latest": bank.latest.frame_index if bank.latest is not None else None,
    }
    for e in ents:
        stem = f"entry_{e.frame_index:05d}"
        write_tensor(d / f"{stem}_keys.vosp", e.keys)
        write_tensor(d / f"{stem}_values.vosp", e.values)
        if e.identity is not None:
            write_tensor(d / f"{stem}_identity.vosp", e.identity)
        index["entries"].append({"frame_index": e.frame_index, "identity": e.identity is not None})
    (d / "bank.json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_bank(directory):
    from .fileio import read_tensor

    d = Path(directory)
    try:
        index = json.loads((d / "bank.json").read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"unreadable bank index in {d}: {exc}") from exc
    loaded = []
    for rec in index["entries"]:
        stem = f"entry_{rec['frame_index']:05d}"
        ident = read_tensor(d / f"{stem}_identity.vosp") if rec["identity"] else None
        loaded.append(
            MemoryEntry(
                rec["frame_index"],
                read_tensor(d / f"{stem}_keys.vosp"),
                read_tensor(d / f"{stem}_values.vosp"),
                ident,
            )
        )
    latest = None
    if index["latest"] is not None:
        latest = loaded.pop()
    bank = MemoryBank(
        loaded[0], index["capacity"], index["policy"], index["video_length"], index["short_term"]
    )
    bank.entries = loaded
    bank.latest = latest
    bank._last_index = index["last_index"]
    return bank
