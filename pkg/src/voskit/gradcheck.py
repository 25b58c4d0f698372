"""Hand-derived gradients of the attention kernels and a finite-difference check.

The scalar loss is the sum of all op outputs, so the upstream gradient is a
matrix of ones.
"""

from __future__ import annotations

import math

import numpy as np

from . import attention as att
from .errors import ConfigError, NumericError

OPS = {
    "correlation": att.correlation,
    "attend": att.attend,
    "attend_with_identity": att.attend_with_identity,
    "attend_lstt_v2": att.attend_lstt_v2,
}

_ARGS = {
    "correlation": ("q", "k"),
    "attend": ("q", "k", "v"),
    "attend_with_identity": ("q", "k", "v", "e"),
    "attend_lstt_v2": ("q", "k", "v", "e", "proj"),
}


def _op_name(op):
    if isinstance(op, str):
        name = op
    else:
        name = getattr(op, "__name__", None)
    if name not in OPS:
        raise ConfigError(f"unsupported op for gradient check: {op!r}")
    return name


def _softmax_backward(p, dp):
    return p * (dp - np.sum(dp * p, axis=1, keepdims=True))


def _attend_backward(q, k, v, temperature):
    s = math.sqrt(q.shape[1]) * temperature
    p = att.softmax_rows((q @ k.T) / s)
    d_out = np.ones((q.shape[0], v.shape[1]))
    dv = p.T @ d_out
    ds = _softmax_backward(p, d_out @ v.T)
    dq = ds @ k / s
    dk = ds.T @ q / s
    return dq, dk, dv


def analytic_gradients(op, inputs, temperature=1.0):
    """Gradient of ``sum(op(**inputs))`` with respect to every array input.

    Returns a dict keyed like ``inputs``; projections contribute
    ``gate_weights`` and ``value_weights`` entries.
    """
    name = _op_name(op)
    q = np.asarray(inputs["q"], dtype=float)
    k = np.asarray(inputs["k"], dtype=float)
    if name == "correlation":
        s = math.sqrt(q.shape[1]) * temperature
        dq = np.broadcast_to(k.sum(axis=0) / s, q.shape).copy()
        dk = np.broadcast_to(q.sum(axis=0) / s, k.shape).copy()
        return {"q": dq, "k": dk}
    v = np.asarray(inputs["v"], dtype=float)
    if name == "attend":
        dq, dk, dv = _attend_backward(q, k, v, temperature)
        return {"q": dq, "k": dk, "v": dv}
    e = np.asarray(inputs["e"], dtype=float)
    if name == "attend_with_identity":
        dq, dk, dv = _attend_backward(q, k, v + e, temperature)
        return {"q": dq, "k": dk, "v": dv, "e": dv.copy()}

    proj = inputs["proj"]
    wg, wv = proj.gate_weights, proj.value_weights
    gate = att.sigmoid(e @ wg)
    dq, dkg, dva = _attend_backward(q, k * gate[:, None], v + e @ wv, temperature)
    dk = dkg * gate[:, None]
    dz = np.sum(dkg * k, axis=1) * gate * (1.0 - gate)
    de = dz[:, None] * wg[None, :] + dva @ wv.T
    return {
        "q": dq,
        "k": dk,
        "v": dva,
        "e": de,
        "gate_weights": e.T @ dz,
        "value_weights": e.T @ dva,
    }


def _loss(name, arrays, proj_layer, temperature):
    args = []
    for a in _ARGS[name]:
        if a == "proj":
            args.append(
                att.LayerProjections(arrays["gate_weights"], arrays["value_weights"], proj_layer)
            )
        else:
            args.append(arrays[a])
    out = OPS[name](*args, temperature=temperature)
    total = math.fsum(out.ravel())
    if not math.isfinite(total):
        raise NumericError("non-finite loss during gradient check")
    return total


def numeric_gradients(op, inputs, eps=1e-5, temperature=1.0):
    name = _op_name(op)
    arrays = {}
    layer = 0
    for a in _ARGS[name]:
        if a == "proj":
            arrays["gate_weights"] = np.array(inputs["proj"].gate_weights, dtype=float, copy=True)
            arrays["value_weights"] = np.array(inputs["proj"].value_weights, dtype=float, copy=True)
            layer = inputs["proj"].layer_index
        else:
            arrays[a] = np.array(inputs[a], dtype=float, copy=True)
    grads = {}
    for key, arr in arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            plus = _loss(name, arrays, layer, temperature)
            arr[idx] = orig - eps
            minus = _loss(name, arrays, layer, temperature)
            arr[idx] = orig
            g[idx] = (plus - minus) / (2.0 * eps)
        grads[key] = g
    return grads


def gradient_check(op, inputs, eps=1e-5, temperature=1.0):
    """Max relative error between analytic and central-difference gradients."""
    if not 1e-7 <= eps <= 1e-3:
        raise ConfigError(f"eps={eps} outside [1e-7, 1e-3]")
    analytic = analytic_gradients(op, inputs, temperature)
    numeric = numeric_gradients(op, inputs, eps, temperature)
    worst = 0.0
    for key, a in analytic.items():
        n = numeric[key]
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n))):
            raise NumericError(f"non-finite gradient for {key}")
        err = np.abs(a - n) / (np.abs(a) + 1e-8)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
