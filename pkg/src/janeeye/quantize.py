"""Post-training quantization: float weights -> Q1.7 raws, float biases ->
32-bit raws at accumulator precision, plus range calibration and an error
report.

No scale search: the formats are fixed by the datapath (weights Q1.7,
activations Q5.11, accumulator 32-bit with 18 fractional bits), so
quantization is round-half-even to the grid with saturation counting.
Biases are excluded from the footprint ratio; they live in a separate
4 KB buffer on the device.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fixed
from .fixed import ACC_FORMAT, ACT_FORMAT, SaturationCounters, WEIGHT_FORMAT
from .network import DEFAULT_CONFIG, JaneEyeNet, ModelConfig, check_weights


@dataclass
class TensorQuantRow:
    name: str
    shape: tuple
    dtype: str
    saturated: int
    max_abs_error: float
    mean_abs_error: float

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "shape": list(self.shape),
            "dtype": self.dtype,
            "saturated": self.saturated,
            "max_abs_error": self.max_abs_error,
            "mean_abs_error": self.mean_abs_error,
        }


@dataclass
class QuantReport:
    tensors: list = field(default_factory=list)
    weight_bytes: int = 0
    bias_bytes: int = 0
    float32_weight_bytes: int = 0

    @property
    def saturated_total(self) -> int:
        return sum(t.saturated for t in self.tensors)

    @property
    def footprint_vs_float32(self) -> float:
        """int8 weights vs float32 weights: exactly 0.25."""
        return self.weight_bytes / self.float32_weight_bytes

    @property
    def footprint_vs_float16(self) -> float:
        return self.weight_bytes / (self.float32_weight_bytes / 2)

    def as_dict(self) -> dict:
        return {
            "weight_bytes": self.weight_bytes,
            "bias_bytes": self.bias_bytes,
            "float32_weight_bytes": self.float32_weight_bytes,
            "footprint_vs_float32": self.footprint_vs_float32,
            "footprint_vs_float16": self.footprint_vs_float16,
            "saturated_total": self.saturated_total,
            "tensors": [t.as_dict() for t in self.tensors],
        }


def quantize_model(weights: dict, config: ModelConfig = DEFAULT_CONFIG):
    """Quantize every tensor in the manifest. Returns (qweights, report);
    weight raws are int8, bias raws int32 at 18 fractional bits."""
    check_weights(config, weights)
    qweights: dict = {}
    report = QuantReport()
    for name, shape in config.weight_manifest():
        arr = np.asarray(weights[name], dtype=np.float64)
        sat = SaturationCounters()
        if name.endswith(".bias"):
            raw = fixed.quantize_bias(arr, sat).astype(np.int32)
            back = raw.astype(np.float64) * ACC_FORMAT.ulp
            qweights[name] = raw
            report.bias_bytes += raw.size * 4
            dtype = "int32"
        else:
            raw = fixed.quantize(arr, WEIGHT_FORMAT, sat).astype(np.int8)
            back = raw.astype(np.float64) * WEIGHT_FORMAT.ulp
            qweights[name] = raw
            report.weight_bytes += raw.size
            report.float32_weight_bytes += raw.size * 4
            dtype = "int8"
        err = np.abs(back - arr)
        report.tensors.append(TensorQuantRow(
            name, tuple(shape), dtype, sat.quantize,
            float(err.max()) if err.size else 0.0,
            float(err.mean()) if err.size else 0.0,
        ))
    return qweights, report


def calibrate_ranges(weights: dict, frames, config: ModelConfig = DEFAULT_CONFIG,
                     reference_activations: str = "smooth") -> dict:
    """Run the float reference over calibration frames and record per-layer
    activation ranges. overflow=True marks layers whose magnitude would not
    fit the Q5.11 grid (|v| >= 16), i.e. layers that will clip when deployed.
    """
    net = JaneEyeNet(config=config, weights=weights, mode="reference",
                     reference_activations=reference_activations)
    _, report = net.predict_with_report(frames)
    ranges: dict = {}
    for row in report.layers:
        lo, hi = ranges.get(row.name, (np.inf, -np.inf))
        ranges[row.name] = (min(lo, row.vmin), max(hi, row.vmax))
    return {
        name: {
            "min": lo,
            "max": hi,
            "overflow": bool(max(abs(lo), abs(hi)) >= ACT_FORMAT.max_value),
        }
        for name, (lo, hi) in ranges.items()
    }
