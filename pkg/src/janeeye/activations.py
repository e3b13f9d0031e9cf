"""Activation functions: exact fixed-point forms and real-valued references.

The deployed datapath uses piecewise-linear gates on Q5.11 raws built from
shifts and compares only:

    hard_sigmoid(x) = 0            x < -4
                      x/8 + 1/2    -4 <= x <= 4
                      1            x > 4

    hard_tanh(x)    = -1           x < -2
                      x/2          -2 <= x <= 2
                      1            x > 2

x/8 and x/2 are arithmetic right shifts (floor), so results can differ from
exact division by one ulp on negative odd raws. Smooth references (sigmoid,
tanh, gelu) exist for error reporting only and never run on the datapath.
"""
from __future__ import annotations

import math

import numpy as np

from .fixed import ACT_FORMAT, dequantize

_ONE = ACT_FORMAT.scale            # 1.0 in Q5.11 -> 2048
_HALF = _ONE >> 1                  # 0.5 -> 1024
_SIG_BREAK = 4 * _ONE              # +-4.0 -> +-8192
_TANH_BREAK = 2 * _ONE             # +-2.0 -> +-4096


def _as_raw(values) -> np.ndarray:
    return np.asarray(values, dtype=np.int64)


def _ret(arr, values):
    return int(arr) if np.asarray(values).ndim == 0 else arr


def hard_sigmoid_raw(values):
    """Fixed-point hard sigmoid on Q5.11 raws; output raw in [0, 2048]."""
    x = _as_raw(values)
    mid = (x >> 3) + _HALF
    out = np.where(x < -_SIG_BREAK, 0, np.where(x > _SIG_BREAK, _ONE, mid))
    return _ret(out, values)


def hard_tanh_raw(values):
    """Fixed-point hard tanh on Q5.11 raws; output raw in [-2048, 2048]."""
    x = _as_raw(values)
    mid = x >> 1
    out = np.where(x < -_TANH_BREAK, -_ONE, np.where(x > _TANH_BREAK, _ONE, mid))
    return _ret(out, values)


def relu_raw(values):
    x = _as_raw(values)
    return _ret(np.maximum(x, 0), values)


def bypass_raw(values):
    x = _as_raw(values)
    return _ret(x, values)


FIXED_ACTIVATIONS = {
    "bypass": bypass_raw,
    "relu": relu_raw,
    "hard_sigmoid": hard_sigmoid_raw,
    "hard_tanh": hard_tanh_raw,
}


def apply_fixed(kind: str, values):
    try:
        return FIXED_ACTIVATIONS[kind](values)
    except KeyError:
        raise ValueError(f"unknown fixed activation {kind!r}") from None


# --- real-valued forms -------------------------------------------------

def hard_sigmoid(values):
    x = np.asarray(values, dtype=np.float64)
    return np.clip(x / 8.0 + 0.5, 0.0, 1.0)


def hard_tanh(values):
    x = np.asarray(values, dtype=np.float64)
    return np.clip(x / 2.0, -1.0, 1.0)


def sigmoid(values):
    x = np.asarray(values, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(values):
    return np.tanh(np.asarray(values, dtype=np.float64))


_erf = np.frompyfunc(math.erf, 1, 1)


def gelu(values):
    """Exact erf-based gelu; reference only, never on the datapath."""
    x = np.asarray(values, dtype=np.float64)
    e = np.asarray(_erf(x / math.sqrt(2.0)), dtype=np.float64)
    return 0.5 * x * (1.0 + e)


def relu(values):
    return np.maximum(np.asarray(values, dtype=np.float64), 0.0)


def identity(values):
    return np.asarray(values, dtype=np.float64)


REFERENCE_ACTIVATIONS = {
    "identity": identity,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "gelu": gelu,
    "hard_sigmoid": hard_sigmoid,
    "hard_tanh": hard_tanh,
}


def apply_reference(kind: str, values):
    try:
        return REFERENCE_ACTIVATIONS[kind](values)
    except KeyError:
        raise ValueError(f"unknown reference activation {kind!r}") from None


def approximation_error(hard: str, reference: str, lo=-8.0, hi=8.0, points=4097) -> dict:
    """Max/mean absolute gap between a piecewise gate and its smooth
    counterpart over a uniform grid. Reported metric, not a test of the
    datapath."""
    grid = np.linspace(lo, hi, points)
    gap = np.abs(apply_reference(hard, grid) - apply_reference(reference, grid))
    return {
        "hard": hard,
        "reference": reference,
        "range": [float(lo), float(hi)],
        "points": int(points),
        "max_abs_error": float(np.max(gap)),
        "mean_abs_error": float(np.mean(gap)),
    }


def fixed_vs_reference_error(kind_fixed: str, kind_reference: str) -> dict:
    """Exhaustive gap between the Q5.11 gate and a real-valued reference."""
    raws = np.arange(ACT_FORMAT.raw_min, ACT_FORMAT.raw_max + 1, dtype=np.int64)
    x = dequantize(raws, ACT_FORMAT)
    got = dequantize(apply_fixed(kind_fixed, raws), ACT_FORMAT)
    want = apply_reference(kind_reference, x)
    gap = np.abs(got - want)
    return {
        "fixed": kind_fixed,
        "reference": kind_reference,
        "max_abs_error": float(np.max(gap)),
        "mean_abs_error": float(np.mean(gap)),
    }
