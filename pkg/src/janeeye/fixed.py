"""Two's-complement fixed-point arithmetic for the deployed datapath.

Formats follow the Qm.n convention with m counting the sign bit: weights are
Q1.7 (8 bit, [-1, 127/128]), activations Q5.11 (16 bit, [-16, 16 - 2^-11]),
and the accumulator is 32 bit interpreted at 18 fractional bits (a Q1.7 raw
times a Q5.11 raw is already at 7 + 11 = 18 fractional bits, so MACs are pure
integer adds).

All operations saturate instead of wrapping and count saturation events.
Rounding into a narrower format is convergent (round half to even); the
divide-by-power-of-two inside the piecewise activations is an arithmetic
right shift, i.e. floor, which differs from exact division by at most 1 ulp
on negative odd raws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


@dataclass(frozen=True)
class QFormat:
    """Signed fixed-point format; int_bits includes the sign bit."""

    int_bits: int
    frac_bits: int

    @property
    def total_bits(self) -> int:
        return self.int_bits + self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min / self.scale

    @property
    def max_value(self) -> float:
        return self.raw_max / self.scale

    @property
    def ulp(self) -> float:
        return 1.0 / self.scale

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"


WEIGHT_FORMAT = QFormat(1, 7)
ACT_FORMAT = QFormat(5, 11)
# 1 sign + 13 integer + 18 fractional = the 32-bit accumulator
ACC_FORMAT = QFormat(14, 18)


@dataclass
class SaturationCounters:
    """Mutable saturation event counts, one field per op family."""

    quantize: int = 0
    mac: int = 0
    truncate: int = 0
    elementwise: int = 0

    def total(self) -> int:
        return self.quantize + self.mac + self.truncate + self.elementwise

    def merge(self, other: "SaturationCounters") -> None:
        self.quantize += other.quantize
        self.mac += other.mac
        self.truncate += other.truncate
        self.elementwise += other.elementwise

    def as_dict(self) -> dict:
        return {
            "quantize": self.quantize,
            "mac": self.mac,
            "truncate": self.truncate,
            "elementwise": self.elementwise,
            "total": self.total(),
        }


def _to_int64(values) -> np.ndarray:
    return np.asarray(values, dtype=np.int64)


def quantize(values, fmt: QFormat, counters: SaturationCounters | None = None):
    """Real values -> raw integers: round half to even, then saturate.

    Returns int64 raws (scalar in, scalar out). Saturations are counted,
    never wrapped.
    """
    arr = np.asarray(values, dtype=np.float64)
    scaled = np.rint(arr * fmt.scale)  # rint ties to even
    if counters is not None:
        counters.quantize += int(np.count_nonzero((scaled < fmt.raw_min) | (scaled > fmt.raw_max)))
    raw = np.clip(scaled, fmt.raw_min, fmt.raw_max).astype(np.int64)
    return int(raw) if np.isscalar(values) or arr.ndim == 0 else raw


def dequantize(raw, fmt: QFormat):
    """Raw integers -> real values (exact for these bit widths)."""
    arr = _to_int64(raw)
    out = arr.astype(np.float64) / fmt.scale
    return float(out) if arr.ndim == 0 else out


def saturate(raw, fmt: QFormat, counters: SaturationCounters | None = None, counter_field="mac"):
    """Clamp raws into the representable range of fmt, counting clips."""
    arr = _to_int64(raw)
    if counters is not None:
        n = int(np.count_nonzero((arr < fmt.raw_min) | (arr > fmt.raw_max)))
        setattr(counters, counter_field, getattr(counters, counter_field) + n)
    out = np.clip(arr, fmt.raw_min, fmt.raw_max)
    return int(out) if arr.ndim == 0 else out


def mac(acc, weight_raw, act_raw, counters: SaturationCounters | None = None):
    """One multiply-accumulate step: acc + w*a, saturating at 32-bit bounds.

    Inputs are raw Q1.7 weights and raw Q5.11 activations; the product is
    exact in int64 (|w*a| <= 2^22), so only the add can saturate.
    """
    acc_arr = _to_int64(acc)
    prod = _to_int64(weight_raw) * _to_int64(act_raw)
    out = acc_arr + prod
    if counters is not None:
        counters.mac += int(np.count_nonzero((out < INT32_MIN) | (out > INT32_MAX)))
    out = np.clip(out, INT32_MIN, INT32_MAX)
    return int(out) if out.ndim == 0 else out


def add_bias(acc, bias_raw, counters: SaturationCounters | None = None):
    """Add a 32-bit raw bias (18 fractional bits) into the accumulator."""
    out = _to_int64(acc) + _to_int64(bias_raw)
    if counters is not None:
        counters.mac += int(np.count_nonzero((out < INT32_MIN) | (out > INT32_MAX)))
    out = np.clip(out, INT32_MIN, INT32_MAX)
    return int(out) if out.ndim == 0 else out


def round_half_even_shift(values, bits: int):
    """Divide raws by 2**bits with convergent rounding (round half to even).

    Works on both signs: floor-shift plus a correction from the non-negative
    remainder, with ties going to the even quotient.
    """
    if bits == 0:
        arr = _to_int64(values)
        return int(arr) if arr.ndim == 0 else arr
    arr = _to_int64(values)
    q = arr >> bits
    r = arr - (q << bits)
    half = 1 << (bits - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    out = q + up.astype(np.int64)
    return int(out) if arr.ndim == 0 else out


def truncate_to_activation(acc, counters: SaturationCounters | None = None):
    """Accumulator (18 frac bits) -> Q5.11: drop 7 bits convergently, saturate."""
    shifted = round_half_even_shift(acc, ACC_FORMAT.frac_bits - ACT_FORMAT.frac_bits)
    return saturate(shifted, ACT_FORMAT, counters, counter_field="truncate")


def elementwise_mul(a_raw, b_raw, counters: SaturationCounters | None = None):
    """Q5.11 * Q5.11 elementwise: exact 22-frac-bit product, one convergent
    rounding back to Q5.11, saturate."""
    prod = _to_int64(a_raw) * _to_int64(b_raw)
    out = round_half_even_shift(prod, ACT_FORMAT.frac_bits)
    return saturate(out, ACT_FORMAT, counters, counter_field="elementwise")


def blend(f_raw, a_raw, b_raw, counters: SaturationCounters | None = None):
    """Convex blend f*a + (1-f)*b on Q5.11 raws with a single rounding.

    f is expected in [0, 1] (raw [0, 2048]); 1-f is formed exactly as
    2048 - f_raw. Both products are kept at 22 fractional bits and rounded
    once, which is how the state-update unit avoids double rounding.
    """
    one = ACT_FORMAT.scale
    f_arr = _to_int64(f_raw)
    acc = f_arr * _to_int64(a_raw) + (one - f_arr) * _to_int64(b_raw)
    out = round_half_even_shift(acc, ACT_FORMAT.frac_bits)
    return saturate(out, ACT_FORMAT, counters, counter_field="elementwise")


def quantize_bias(values, counters: SaturationCounters | None = None):
    """Real biases -> 32-bit raws at the accumulator's 18 fractional bits."""
    return quantize(values, ACC_FORMAT, counters)
