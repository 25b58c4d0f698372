"""Dense attention kernels used for pixel-level memory matching.

Three matching variants are provided:

* ``attend``               softmax(Q K^T / sqrt(C)) V
* ``attend_with_identity`` identification embeddings added to the values
* ``attend_lstt_v2``       keys gated per token by sigmoid(E w_g), values
                           augmented with a per-layer projection E W_id

All inputs are 2-D float arrays with one row per token. Functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

DTYPE = np.float64


def _as_matrix(x, name):
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class LayerProjections:
    """Per-layer gate and value projections of identification embeddings.

    ``gate_weights`` has shape (D_e,) and maps each token's embedding to one
    scalar. ``value_weights`` has shape (D_e, D_v). No bias terms.
    """

    gate_weights: np.ndarray
    value_weights: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        g = np.array(self.gate_weights, dtype=DTYPE)
        if g.ndim == 2 and g.shape[1] == 1:
            g = g[:, 0]
        if g.ndim != 1:
            raise ShapeError(f"gate_weights must map to one channel, got shape {g.shape}")
        w = np.array(self.value_weights, dtype=DTYPE)
        if w.ndim != 2 or w.shape[0] != g.shape[0]:
            raise ShapeError(
                f"value_weights shape {w.shape} incompatible with gate input dim {g.shape[0]}"
            )
        g.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "gate_weights", g)
        object.__setattr__(self, "value_weights", w)

    @property
    def embed_dim(self):
        return self.gate_weights.shape[0]

    @property
    def value_dim(self):
        return self.value_weights.shape[1]

    @classmethod
    def zeros(cls, embed_dim, value_dim=None, layer_index=0):
        value_dim = embed_dim if value_dim is None else value_dim
        return cls(np.zeros(embed_dim), np.zeros((embed_dim, value_dim)), layer_index)

    @classmethod
    def random(cls, embed_dim, value_dim=None, layer_index=0, rng=None, scale=1.0):
        rng = np.random.default_rng(rng)
        value_dim = embed_dim if value_dim is None else value_dim
        g = rng.normal(0.0, scale / math.sqrt(embed_dim), size=embed_dim)
        w = rng.normal(0.0, scale / math.sqrt(embed_dim), size=(embed_dim, value_dim))
        return cls(g, w, layer_index)


def make_layer_stack(n_layers, embed_dim, value_dim=None, seed=0, scale=1.0):
    """Independent projections for ``n_layers`` matching layers."""
    if n_layers < 1:
        raise ConfigError("n_layers must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        LayerProjections.random(embed_dim, value_dim, layer_index=i, rng=rng, scale=scale)
        for i in range(n_layers)
    ]


def correlation(q, k, temperature=1.0):
    """Scaled dot-product scores ``q k^T / (sqrt(C) * temperature)``."""
    q = _as_matrix(q, "Q")
    k = _as_matrix(k, "K")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"channel mismatch: Q has {q.shape[1]}, K has {k.shape[1]}")
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    scores = q @ k.T
    scores /= math.sqrt(q.shape[1]) * temperature
    return scores


def softmax_rows(scores):
    """Row-wise softmax with max subtraction. ``-inf`` entries get weight 0."""
    s = np.asarray(scores, dtype=DTYPE)
    if s.ndim != 2 or s.shape[1] == 0:
        raise ShapeError(f"scores must be 2-D with at least one column, got {s.shape}")
    if np.any(np.isnan(s)) or np.any(s == np.inf):
        raise NumericError("scores contain NaN or +inf")
    row_max = s.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        raise NumericError("a score row has no finite entry")
    e = np.exp(s - row_max)
    return e / e.sum(axis=1, keepdims=True)


def topk_filter(scores, k):
    """Keep the ``k`` largest entries of each row; set the rest to ``-inf``.

    Ties at the cut are resolved towards the lower column index.
    """
    s = np.asarray(scores, dtype=DTYPE)
    n = s.shape[1]
    if not 1 <= k <= n:
        raise ConfigError(f"top-k k={k} outside [1, {n}]")
    if k == n:
        return s.copy()
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    out = np.full_like(s, -np.inf)
    rows = np.arange(s.shape[0])[:, None]
    out[rows, order] = s[rows, order]
    return out


def _check_kv(k, v):
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"K has {k.shape[0]} tokens but V has {v.shape[0]}")


def attention_weights(q, k, temperature=1.0, topk=None):
    scores = correlation(q, k, temperature)
    if topk is not None:
        scores = topk_filter(scores, topk)
    return softmax_rows(scores)


def attend(q, k, v, temperature=1.0, topk=None):
    k = _as_matrix(k, "K")
    v = _as_matrix(v, "V")
    _check_kv(k, v)
    scores = correlation(q, k, temperature)
    if topk is not None:
        scores = topk_filter(scores, topk)
    # in-place softmax; normalisation is applied after the value product
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    return (scores @ v) / scores.sum(axis=1, keepdims=True)


def attend_with_identity(q, k, v, e, temperature=1.0, topk=None):
    v = _as_matrix(v, "V")
    e = _as_matrix(e, "E")
    if e.shape != v.shape:
        raise ShapeError(f"E shape {e.shape} does not match V shape {v.shape}")
    return attend(q, k, v + e, temperature, topk)


def gate_keys(k, e, proj):
    """Return the gated keys and the per-token gate vector."""
    if e.shape[0] != k.shape[0]:
        raise ShapeError(f"E has {e.shape[0]} tokens but K has {k.shape[0]}")
    if e.shape[1] != proj.embed_dim:
        raise ShapeError(f"E dim {e.shape[1]} != projection input dim {proj.embed_dim}")
    gate = sigmoid(e @ proj.gate_weights)
    return k * gate[:, None], gate


def augment_values(v, e, proj):
    if proj.value_dim != v.shape[1]:
        raise ShapeError(f"projection output dim {proj.value_dim} != V dim {v.shape[1]}")
    return v + e @ proj.value_weights


def attend_lstt_v2(q, k, v, e, proj, temperature=1.0, topk=None):
    k = _as_matrix(k, "K")
    v = _as_matrix(v, "V")
    e = _as_matrix(e, "E")
    _check_kv(k, v)
    gated, _ = gate_keys(k, e, proj)
    return attend(q, gated, augment_values(v, e, proj), temperature, topk)
