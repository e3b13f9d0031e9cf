"""Pupil localization network: reference (float) and deployed (fixed-point)
engines over a shared layer plan.

Structure: three-conv backbone (7x7, 3x3, 3x3, ReLU, optional 2x2 max pool
between the last two), one gated-MLP mixing block (1x1 expand to 2C, split,
Y = Z1 * act(Z2), 1x1 project), one convolutional forget-gate recurrent cell
(two depthwise-separable gates; the state doubles as the hidden output), and
a head (global max pool, FC to two coordinates).

Deployed mode runs entirely on Q1.7 weights and Q5.11 activations with
32-bit accumulation in a fixed order (input-channel-major, then kernel
row-major, then column), so results are bit-reproducible and independent of
the execution schedule. Reference mode runs in float64 with either smooth
activations (sigmoid/tanh/gelu) or the hardware piecewise forms.

The FC output is in downsampled-frame pixels divided by output_scale so it
fits the Q5.11 range; predict() undoes the scale.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import activations as acts
from . import fixed
from .fixed import ACT_FORMAT, SaturationCounters, WEIGHT_FORMAT
from .validation import ValidationError


def conv_output_hw(in_hw, kernel, stride, padding):
    h, w = in_hw
    return (
        (h + 2 * padding - kernel) // stride + 1,
        (w + 2 * padding - kernel) // stride + 1,
    )


@dataclass(frozen=True)
class LayerSpec:
    """Shape bookkeeping for one schedulable op; params/MACs are closed form."""

    name: str
    op: str                  # conv | depthwise | pointwise | maxpool | fc
    in_hw: tuple
    out_hw: tuple
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    bias: bool = True
    activation: str = "bypass"
    block: str = ""          # backbone | gmlp | recurrent | head

    @property
    def out_positions(self) -> int:
        return self.out_hw[0] * self.out_hw[1]

    @property
    def params(self) -> int:
        if self.op == "maxpool":
            return 0
        if self.op == "fc":
            n = self.out_channels * self.in_channels
        elif self.op == "depthwise":
            n = self.in_channels * self.kernel * self.kernel
        else:
            n = self.out_channels * self.in_channels * self.kernel * self.kernel
        return n + (self.out_channels if self.bias else 0)

    @property
    def macs(self) -> int:
        if self.op == "maxpool":
            return 0
        if self.op == "fc":
            return self.out_channels * self.in_channels
        if self.op == "depthwise":
            return self.out_positions * self.in_channels * self.kernel * self.kernel
        return self.out_positions * self.out_channels * self.in_channels * self.kernel * self.kernel

    @property
    def weight_shape(self) -> tuple:
        if self.op == "fc":
            return (self.out_channels, self.in_channels)
        if self.op == "depthwise":
            return (self.in_channels, 1, self.kernel, self.kernel)
        if self.op == "maxpool":
            return ()
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; the defaults hit the published budgets
    (17.6K parameters, 10.7M FLOPs counted as 2 MACs) within +-10%."""

    input_hw: tuple = (60, 80)
    in_channels: int = 3
    conv_channels: tuple = (10, 20, 32)
    conv_kernels: tuple = (7, 3, 3)
    conv_strides: tuple = (2, 1, 2)
    pool_factor: int = 2            # 2x2 max pool between conv2 and conv3; 1 = off
    gmlp_expand: int = 2
    gmlp_after_recurrent: bool = False
    gate_kernel: int = 3
    output_scale: float = 8.0       # FC emits frame pixels / output_scale
    sensor_scale: int = 8           # frame pixels -> sensor pixels

    def validate(self) -> None:
        if len(self.conv_channels) != 3 or len(self.conv_kernels) != 3 or len(self.conv_strides) != 3:
            raise ValidationError("backbone needs exactly three conv layers")
        expanded = self.gmlp_expand * self.conv_channels[-1]
        if expanded % 2 != 0:
            raise ValidationError(
                f"gated block expands to {expanded} channels, which cannot be split in two",
                code="odd_gmlp_expand",
            )
        if self.pool_factor not in (1, 2):
            raise ValidationError("pool_factor must be 1 or 2")

    # --- plan -----------------------------------------------------------

    def backbone_specs(self) -> list:
        self.validate()
        specs = []
        hw = self.input_hw
        cin = self.in_channels
        for i, (k, s, cout) in enumerate(
            zip(self.conv_kernels, self.conv_strides, self.conv_channels), start=1
        ):
            if i == 3 and self.pool_factor > 1:
                if hw[0] % self.pool_factor or hw[1] % self.pool_factor:
                    raise ValidationError(f"pool input {hw} not divisible by {self.pool_factor}")
                pooled = (hw[0] // self.pool_factor, hw[1] // self.pool_factor)
                specs.append(LayerSpec(
                    "pool", "maxpool", hw, pooled, cin, cin,
                    kernel=self.pool_factor, stride=self.pool_factor,
                    bias=False, block="backbone",
                ))
                hw = pooled
            out_hw = conv_output_hw(hw, k, s, k // 2)
            specs.append(LayerSpec(
                f"conv{i}", "conv", hw, out_hw, cin, cout,
                kernel=k, stride=s, padding=k // 2,
                activation="relu", block="backbone",
            ))
            hw, cin = out_hw, cout
        return specs

    def gmlp_specs(self, hw) -> list:
        c = self.conv_channels[-1]
        return [
            LayerSpec("gmlp.expand", "pointwise", hw, hw, c, self.gmlp_expand * c,
                      block="gmlp"),
            LayerSpec("gmlp.project", "pointwise", hw, hw, self.gmlp_expand * c // 2, c,
                      block="gmlp"),
        ]

    def gate_specs(self, hw, gate_names) -> list:
        """Depthwise+pointwise spec pair per gate, input is [x, state] (2C)."""
        c = self.conv_channels[-1]
        k = self.gate_kernel
        specs = []
        for g in gate_names:
            specs.append(LayerSpec(
                f"cell.{g}.dw", "depthwise", hw, hw, 2 * c, 2 * c,
                kernel=k, stride=1, padding=k // 2, bias=False, block="recurrent",
            ))
            specs.append(LayerSpec(
                f"cell.{g}.pw", "pointwise", hw, hw, 2 * c, c, block="recurrent",
            ))
        return specs

    def head_specs(self, hw) -> list:
        c = self.conv_channels[-1]
        return [
            LayerSpec("head.pool", "maxpool", hw, (1, 1), c, c,
                      kernel=0, stride=0, bias=False, block="head"),
            LayerSpec("head.fc", "fc", (1, 1), (1, 1), c, 2, block="head"),
        ]

    def layer_specs(self, cell="janet") -> list:
        """Flat op list in execution order; cell='convlstm' swaps the gate
        set for the 4-gate comparison baseline."""
        gates = ("forget", "cand") if cell == "janet" else ("input", "forget", "output", "cand")
        backbone = self.backbone_specs()
        hw = backbone[-1].out_hw
        gmlp = self.gmlp_specs(hw)
        cellspecs = self.gate_specs(hw, gates)
        mid = cellspecs + gmlp if self.gmlp_after_recurrent else gmlp + cellspecs
        return backbone + mid + self.head_specs(hw)

    # --- closed-form accounting ------------------------------------------

    def param_count(self, cell="janet") -> int:
        return sum(s.params for s in self.layer_specs(cell))

    def mac_count(self, cell="janet") -> int:
        """MACs for one frame. FLOPs are conventionally 2x this."""
        return sum(s.macs for s in self.layer_specs(cell))

    def gate_accounting(self) -> dict:
        """Gate-only params/MACs for the 2-gate cell vs the 4-gate baseline."""
        out = {}
        hw = self.backbone_specs()[-1].out_hw
        for cell, gates in (("janet", ("forget", "cand")),
                            ("convlstm", ("input", "forget", "output", "cand"))):
            specs = self.gate_specs(hw, gates)
            out[cell] = {
                "gates": len(gates),
                "params": sum(s.params for s in specs),
                "macs": sum(s.macs for s in specs),
            }
        return out

    def weight_manifest(self) -> list:
        """(name, shape) pairs for every tensor the deployed model needs."""
        entries = []
        for s in self.layer_specs():
            if s.op == "maxpool":
                continue
            entries.append((f"{s.name}.weight", s.weight_shape))
            if s.bias:
                entries.append((f"{s.name}.bias", (s.out_channels,)))
        return entries


DEFAULT_CONFIG = ModelConfig()

PARAM_TARGET = 17_600
MAC_TARGET = 5_350_000  # = 10.7M FLOPs / 2


def search_default_config(
    param_target=PARAM_TARGET,
    mac_target=MAC_TARGET,
    tolerance=0.10,
    channel_grid=(8, 10, 12, 16, 20, 24, 32, 40, 48),
) -> list:
    """Enumerate backbone widths/strides/pooling and rank configs by worst
    relative distance to the parameter and MAC budgets.

    This is the resolution procedure for the unpublished channel dims: the
    published table pins only totals, so the widths are recovered by search.
    Returns (score, config) pairs, best first, for configs inside tolerance.
    """
    results = []
    for c1, c2, c3 in itertools.product(channel_grid, repeat=3):
        for strides, pool in (((2, 1, 2), 2), ((2, 2, 1), 1), ((2, 2, 2), 1), ((2, 1, 2), 1)):
            cfg = ModelConfig(conv_channels=(c1, c2, c3), conv_strides=strides, pool_factor=pool)
            try:
                p, m = cfg.param_count(), cfg.mac_count()
            except ValidationError:
                continue
            dp = abs(p - param_target) / param_target
            dm = abs(m - mac_target) / mac_target
            if dp <= tolerance and dm <= tolerance:
                results.append((max(dp, dm), cfg))
    results.sort(key=lambda r: r[0])
    return results


# --- weights --------------------------------------------------------------

def init_weights(config: ModelConfig = DEFAULT_CONFIG, seed=0) -> dict:
    """Synthetic float weights (He-style scale, clipped to the Q1.7 range).
    Stand-in for trained weights; training is out of scope."""
    rng = np.random.default_rng(seed)
    weights = {}
    for spec in config.layer_specs():
        if spec.op == "maxpool":
            continue
        fan_in = spec.in_channels * spec.kernel * spec.kernel if spec.op != "fc" else spec.in_channels
        if spec.op == "depthwise":
            fan_in = spec.kernel * spec.kernel
        scale = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, scale, size=spec.weight_shape)
        weights[f"{spec.name}.weight"] = np.clip(
            w, WEIGHT_FORMAT.min_value, WEIGHT_FORMAT.max_value
        ).astype(np.float32)
        if spec.bias:
            weights[f"{spec.name}.bias"] = np.zeros(spec.out_channels, dtype=np.float32)
    return weights


def check_weights(config: ModelConfig, weights: dict) -> None:
    for name, shape in config.weight_manifest():
        if name not in weights:
            raise ValidationError(f"missing tensor {name!r}", code="missing_tensor")
        got = tuple(weights[name].shape)
        if got != tuple(shape):
            raise ValidationError(
                f"tensor {name!r} has shape {got}, expected {tuple(shape)}",
                code="tensor_shape",
            )


# --- counters ---------------------------------------------------------------

@dataclass
class LayerCounters:
    name: str
    params: int
    macs: int = 0
    out_elements: int = 0
    zero_fraction: float = 0.0
    vmin: float = 0.0          # value-domain output range (raw * ulp in fixed mode)
    vmax: float = 0.0
    saturations: SaturationCounters = field(default_factory=SaturationCounters)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "macs": self.macs,
            "out_elements": self.out_elements,
            "zero_fraction": round(self.zero_fraction, 6),
            "vmin": self.vmin,
            "vmax": self.vmax,
            "saturations": self.saturations.as_dict(),
        }


@dataclass
class CounterReport:
    """Per-sequence instrumentation emitted by forward passes."""

    mode: str
    frames: int
    layers: list = field(default_factory=list)
    state_resets: int = 0

    @property
    def macs_total(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def macs_per_frame(self) -> int:
        return self.macs_total // max(self.frames, 1)

    @property
    def params_total(self) -> int:
        seen, total = set(), 0
        for l in self.layers:
            if l.name not in seen:
                seen.add(l.name)
                total += l.params
        return total

    def saturation_total(self) -> int:
        return sum(l.saturations.total() for l in self.layers)

    def sparsity_by_layer(self) -> dict:
        agg: dict = {}
        for l in self.layers:
            frac, n = agg.get(l.name, (0.0, 0))
            agg[l.name] = (frac + l.zero_fraction, n + 1)
        return {k: v[0] / v[1] for k, v in agg.items()}

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "frames": self.frames,
            "params_total": self.params_total,
            "macs_per_frame": self.macs_per_frame,
            "flops_per_frame": 2 * self.macs_per_frame,
            "state_resets": self.state_resets,
            "saturations_total": self.saturation_total(),
            "sparsity_by_layer": {k: round(v, 6) for k, v in self.sparsity_by_layer().items()},
            "layers": [l.as_dict() for l in self.layers],
        }


# --- fixed-point engine ------------------------------------------------------

def conv2d_fixed(x_raw, w_raw, bias_raw, spec: LayerSpec, counters=None):
    """Saturating fixed-point convolution returning 32-bit accumulators.

    Accumulation order per output element is input-channel-major, then
    kernel row, then kernel column; every step saturates. The tile-level
    engine in the performance model follows the same order, which is what
    makes the two bit-identical.
    """
    cin, (ho, wo), s, k, p = x_raw.shape[0], spec.out_hw, spec.stride, spec.kernel, spec.padding
    xp = np.pad(x_raw, ((0, 0), (p, p), (p, p))) if p else x_raw
    acc = np.zeros((spec.out_channels, ho, wo), dtype=np.int64)
    depthwise = spec.op == "depthwise"
    for ci in range(cin):
        for kr in range(k):
            for kc in range(k):
                patch = xp[ci, kr:kr + s * ho:s, kc:kc + s * wo:s]
                if depthwise:
                    step = w_raw[ci, 0, kr, kc] * patch
                    out = acc[ci] + step
                    if counters is not None:
                        counters.mac += int(np.count_nonzero(
                            (out < fixed.INT32_MIN) | (out > fixed.INT32_MAX)))
                    acc[ci] = np.clip(out, fixed.INT32_MIN, fixed.INT32_MAX)
                else:
                    w_step = w_raw[:, ci, kr, kc].astype(np.int64)
                    acc = fixed.mac(acc, w_step[:, None, None], patch[None, :, :], counters)
    if bias_raw is not None:
        acc = fixed.add_bias(acc, bias_raw.astype(np.int64)[:, None, None], counters)
    return acc


def _finish_fixed(acc, activation, counters):
    out = fixed.truncate_to_activation(acc, counters)
    return acts.apply_fixed(activation, out)


def maxpool_fixed(x_raw, factor):
    c, h, w = x_raw.shape
    return x_raw.reshape(c, h // factor, factor, w // factor, factor).max(axis=(2, 4))


def fc_fixed(x_raw, w_raw, bias_raw, counters=None):
    acc = np.zeros(w_raw.shape[0], dtype=np.int64)
    for ci in range(w_raw.shape[1]):  # input-channel-major order
        acc = fixed.mac(acc, w_raw[:, ci].astype(np.int64), x_raw[ci], counters)
    if bias_raw is not None:
        acc = fixed.add_bias(acc, bias_raw.astype(np.int64), counters)
    return fixed.truncate_to_activation(acc, counters)


# --- reference engine --------------------------------------------------------

def conv2d_reference(x, w, bias, spec: LayerSpec):
    cin, (ho, wo), s, k, p = x.shape[0], spec.out_hw, spec.stride, spec.kernel, spec.padding
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    if spec.op == "depthwise":
        acc = np.zeros((cin, ho, wo), dtype=np.float64)
        for ci in range(cin):
            for kr in range(k):
                for kc in range(k):
                    acc[ci] += w[ci, 0, kr, kc] * xp[ci, kr:kr + s * ho:s, kc:kc + s * wo:s]
    else:
        acc = np.zeros((spec.out_channels, ho, wo), dtype=np.float64)
        for ci in range(cin):
            for kr in range(k):
                for kc in range(k):
                    acc += w[:, ci, kr, kc, None, None] * xp[ci, kr:kr + s * ho:s, kc:kc + s * wo:s]
    if bias is not None:
        acc += np.asarray(bias, dtype=np.float64)[:, None, None]
    return acc


def maxpool_reference(x, factor):
    c, h, w = x.shape
    return x.reshape(c, h // factor, factor, w // factor, factor).max(axis=(2, 4))


# --- model ------------------------------------------------------------------

GATE_ACTIVATIONS = {
    "fixed": {"forget": "hard_sigmoid", "cand": "hard_tanh", "gmlp": "relu"},
    "smooth": {"forget": "sigmoid", "cand": "tanh", "gmlp": "gelu"},
    "hardware": {"forget": "hard_sigmoid", "cand": "hard_tanh", "gmlp": "relu"},
}


class JaneEyeNet(BaseEstimator):
    """Inference-only estimator: (N, 3, H, W) count frames -> (N, 2) pupil
    coordinates in downsampled-frame pixels.

    mode='fixed' needs quantized weights (int8/int32 raws); mode='reference'
    needs float weights. reference_activations picks smooth or hardware
    piecewise gates for the float path (the fixed path always uses the
    hardware set). fit() only validates; there is no training here.
    """

    def __init__(self, config: ModelConfig = DEFAULT_CONFIG, weights=None,
                 qweights=None, mode="fixed", reference_activations="smooth"):
        self.config = config
        self.weights = weights
        self.qweights = qweights
        self.mode = mode
        self.reference_activations = reference_activations

    def fit(self, X=None, y=None):
        self.config.validate()
        return self

    # -- helpers --

    def _frames_array(self, frames) -> np.ndarray:
        arr = np.asarray(frames)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1] != self.config.in_channels:
            raise ValidationError(
                f"expected (N, {self.config.in_channels}, H, W) frames, got {arr.shape}")
        if tuple(arr.shape[2:]) != tuple(self.config.input_hw):
            raise ValidationError(
                f"frame size {arr.shape[2:]} does not match config {self.config.input_hw}")
        return arr

    def _gate_act(self, gate):
        table = GATE_ACTIVATIONS["fixed" if self.mode == "fixed" else self.reference_activations]
        return table[gate]

    def predict(self, X) -> np.ndarray:
        coords, _ = self.predict_with_report(X)
        return coords

    def predict_with_report(self, X, capture=None):
        """capture, if given, is a dict filled with per-layer output raws
        (lists over frames); used to cross-check other execution schedules."""
        frames = self._frames_array(X)
        if self.mode == "fixed":
            if self.qweights is None:
                raise ValidationError("fixed mode needs quantized weights", code="missing_tensor")
            check_weights(self.config, self.qweights)
            return self._run_fixed(frames, capture)
        if self.mode == "reference":
            if self.weights is None:
                raise ValidationError("reference mode needs float weights", code="missing_tensor")
            check_weights(self.config, self.weights)
            return self._run_reference(frames)
        raise ValidationError(f"unknown mode {self.mode!r}")

    # -- fixed path --

    def _run_fixed(self, frames, capture=None):
        cfg = self.config
        qw = self.qweights
        report = CounterReport(mode="fixed", frames=len(frames), state_resets=1)
        specs = {s.name: s for s in cfg.layer_specs()}
        state = np.zeros((cfg.conv_channels[-1],) + cfg.backbone_specs()[-1].out_hw, dtype=np.int64)
        coords = np.zeros((len(frames), 2), dtype=np.float64)

        def track(name, macs, out, sat):
            arr = np.asarray(out)
            row = LayerCounters(name, specs[name].params if name in specs else 0,
                                macs, int(arr.size), float(np.mean(arr == 0)),
                                float(arr.min()) * ACT_FORMAT.ulp,
                                float(arr.max()) * ACT_FORMAT.ulp, sat)
            report.layers.append(row)
            if capture is not None:
                capture.setdefault(name, []).append(np.array(out, copy=True))

        for fi, frame in enumerate(frames):
            sat_in = SaturationCounters()
            x = fixed.quantize(frame.astype(np.float64), ACT_FORMAT, sat_in)
            track("input", 0, x, sat_in)
            for spec in cfg.backbone_specs():
                if spec.op == "maxpool":
                    x = maxpool_fixed(x, spec.kernel)
                    track(spec.name, 0, x, SaturationCounters())
                    continue
                sat = SaturationCounters()
                acc = conv2d_fixed(x, qw[f"{spec.name}.weight"], qw[f"{spec.name}.bias"], spec, sat)
                x = _finish_fixed(acc, spec.activation, sat)
                track(spec.name, spec.macs, x, sat)
            if cfg.gmlp_after_recurrent:
                x = self._cell_fixed(x, state, track)
                x = self._gmlp_fixed(x, track)
            else:
                x = self._gmlp_fixed(x, track)
                x = self._cell_fixed(x, state, track)
            coords[fi] = self._head_fixed(x, track)
        return coords, report

    def _gmlp_fixed(self, x, track):
        cfg, qw = self.config, self.qweights
        expand, project = cfg.gmlp_specs(tuple(x.shape[1:]))
        sat = SaturationCounters()
        z = _finish_fixed(conv2d_fixed(x, qw["gmlp.expand.weight"], qw["gmlp.expand.bias"], expand, sat),
                          "bypass", sat)
        track(expand.name, expand.macs, z, sat)
        half = z.shape[0] // 2
        z1, z2 = z[:half], z[half:]  # value path first, gate path second
        sat = SaturationCounters()
        gated = fixed.elementwise_mul(z1, acts.apply_fixed(self._gate_act("gmlp"), z2), sat)
        y = _finish_fixed(conv2d_fixed(gated, qw["gmlp.project.weight"], qw["gmlp.project.bias"], project, sat),
                          "bypass", sat)
        track(project.name, project.macs, y, sat)
        return y

    def _cell_fixed(self, x, state, track):
        cfg, qw = self.config, self.qweights
        hw = tuple(x.shape[1:])
        stacked = np.concatenate([x, state])  # input channels first, state after
        gates = {}
        for g, dw_spec, pw_spec in self._gate_spec_pairs(hw):
            sat = SaturationCounters()
            mid = _finish_fixed(conv2d_fixed(stacked, qw[f"cell.{g}.dw.weight"], None, dw_spec, sat),
                                "bypass", sat)
            track(dw_spec.name, dw_spec.macs, mid, sat)
            sat = SaturationCounters()
            pre = conv2d_fixed(mid, qw[f"cell.{g}.pw.weight"], qw[f"cell.{g}.pw.bias"], pw_spec, sat)
            gates[g] = _finish_fixed(pre, self._gate_act(g), sat)
            track(pw_spec.name, pw_spec.macs, gates[g], sat)
        sat = SaturationCounters()
        new_state = fixed.blend(gates["forget"], state, gates["cand"], sat)
        track("cell.update", 0, new_state, sat)
        state[...] = new_state
        return new_state

    def _gate_spec_pairs(self, hw):
        specs = self.config.gate_specs(hw, ("forget", "cand"))
        return [("forget", specs[0], specs[1]), ("cand", specs[2], specs[3])]

    def _head_fixed(self, x, track):
        pool = x.max(axis=(1, 2))  # global max per channel, exact on raws
        track("head.pool", 0, pool, SaturationCounters())
        sat = SaturationCounters()
        out = fc_fixed(pool, self.qweights["head.fc.weight"], self.qweights["head.fc.bias"], sat)
        track("head.fc", self.config.head_specs((1, 1))[1].macs, out, sat)
        return fixed.dequantize(out, ACT_FORMAT) * self.config.output_scale

    # -- reference path --

    def _run_reference(self, frames):
        cfg, w = self.config, self.weights
        report = CounterReport(mode="reference", frames=len(frames), state_resets=1)
        specs = {s.name: s for s in cfg.layer_specs()}
        state = np.zeros((cfg.conv_channels[-1],) + cfg.backbone_specs()[-1].out_hw)
        coords = np.zeros((len(frames), 2))

        def track(name, macs, out):
            arr = np.asarray(out)
            report.layers.append(LayerCounters(
                name, specs[name].params if name in specs else 0, macs,
                int(arr.size), float(np.mean(arr == 0.0)),
                float(arr.min()), float(arr.max())))

        for fi, frame in enumerate(frames):
            x = frame.astype(np.float64)
            track("input", 0, x)
            for spec in cfg.backbone_specs():
                if spec.op == "maxpool":
                    x = maxpool_reference(x, spec.kernel)
                    track(spec.name, 0, x)
                    continue
                x = acts.apply_reference(
                    spec.activation,
                    conv2d_reference(x, w[f"{spec.name}.weight"], w[f"{spec.name}.bias"], spec))
                track(spec.name, spec.macs, x)
            if cfg.gmlp_after_recurrent:
                x = self._cell_reference(x, state, track)
                state[...] = x
                x = self._gmlp_reference(x, track)
            else:
                x = self._gmlp_reference(x, track)
                x = self._cell_reference(x, state, track)
                state[...] = x
            coords[fi] = self._head_reference(x, track)
        return coords, report

    def _gmlp_reference(self, x, track):
        cfg, w = self.config, self.weights
        expand, project = cfg.gmlp_specs(tuple(x.shape[1:]))
        z = conv2d_reference(x, w["gmlp.expand.weight"], w["gmlp.expand.bias"], expand)
        track(expand.name, expand.macs, z)
        half = z.shape[0] // 2
        gated = z[:half] * acts.apply_reference(self._gate_act("gmlp"), z[half:])
        y = conv2d_reference(gated, w["gmlp.project.weight"], w["gmlp.project.bias"], project)
        track(project.name, project.macs, y)
        return y

    def _cell_reference(self, x, state, track):
        w = self.weights
        hw = tuple(x.shape[1:])
        stacked = np.concatenate([x, state])
        gates = {}
        for g, dw_spec, pw_spec in self._gate_spec_pairs(hw):
            mid = conv2d_reference(stacked, w[f"cell.{g}.dw.weight"], None, dw_spec)
            track(dw_spec.name, dw_spec.macs, mid)
            pre = conv2d_reference(mid, w[f"cell.{g}.pw.weight"], w[f"cell.{g}.pw.bias"], pw_spec)
            gates[g] = acts.apply_reference(self._gate_act(g), pre)
            track(pw_spec.name, pw_spec.macs, gates[g])
        new_state = gates["forget"] * state + (1.0 - gates["forget"]) * gates["cand"]
        track("cell.update", 0, new_state)
        return new_state

    def _head_reference(self, x, track):
        w = self.weights
        pool = x.max(axis=(1, 2))
        track("head.pool", 0, pool)
        out = w["head.fc.weight"] @ pool + w["head.fc.bias"]
        track("head.fc", self.config.head_specs((1, 1))[1].macs, out)
        return out * self.config.output_scale

    def to_sensor_coords(self, coords) -> np.ndarray:
        """Frame-pixel coordinates -> sensor pixels (x8 by default)."""
        return np.asarray(coords) * self.config.sensor_scale


# --- 4-gate comparison cell ---------------------------------------------------

def convlstm_step_reference(x, h, c, weights, config: ModelConfig = DEFAULT_CONFIG):
    """One step of the 4-gate baseline cell (reference arithmetic only).
    Exists for the gate-cost comparison; the deployed pipeline uses the
    2-gate cell."""
    hw = tuple(x.shape[1:])
    stacked = np.concatenate([x, h])
    specs = config.gate_specs(hw, ("input", "forget", "output", "cand"))
    vals = {}
    for i, g in enumerate(("input", "forget", "output", "cand")):
        dw_spec, pw_spec = specs[2 * i], specs[2 * i + 1]
        mid = conv2d_reference(stacked, weights[f"cell.{g}.dw.weight"], None, dw_spec)
        pre = conv2d_reference(mid, weights[f"cell.{g}.pw.weight"], weights[f"cell.{g}.pw.bias"], pw_spec)
        vals[g] = acts.sigmoid(pre) if g != "cand" else acts.tanh(pre)
    c_new = vals["forget"] * c + vals["input"] * vals["cand"]
    h_new = vals["output"] * acts.tanh(c_new)
    return h_new, c_new


def init_convlstm_weights(config: ModelConfig = DEFAULT_CONFIG, seed=0) -> dict:
    rng = np.random.default_rng(seed)
    hw = config.backbone_specs()[-1].out_hw
    weights = {}
    for spec in config.gate_specs(hw, ("input", "forget", "output", "cand")):
        fan_in = spec.kernel * spec.kernel if spec.op == "depthwise" else spec.in_channels
        weights[f"{spec.name}.weight"] = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape).astype(np.float32)
        if spec.bias:
            weights[f"{spec.name}.bias"] = np.zeros(spec.out_channels, dtype=np.float32)
    return weights
