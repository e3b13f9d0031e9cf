"""Cycle-approximate performance and energy model of the 8x8 PE array.

Microarchitecture modeled (one MAC datapath, three dataflows):

- The array maps an 8x8 tile of output positions, one PE per position.
  Each PE is an 8-lane dot-product unit across the current group of 8
  input channels, so peak throughput is 512 MACs/cycle at 400 MHz.
- A pass covers one output tile x one 8-input-channel group x one
  8-output-channel group and takes 8*k^2 cycles (one cycle per
  (kernel position, output channel) step). k=3 matches the pinned
  64-cycle tile figure; other kernels fall back to 8*k^2.
- Weights for one (lane set, output channel) stay resident in the per-PE
  register file for the k^2 kernel steps of a slice, so the reuse
  fraction is (k^2-1)/k^2: 98.0% for 7x7, 88.9% for 3x3.
- Dataflow: weight-stationary for the backbone and the gated block,
  output-stationary for the recurrent gates (partial sums stay in the
  PE across an input-channel group), row-stationary for the FC head.
  Each mode change costs a 2-cycle reconfiguration.
- Per tiled layer there is a 24-cycle overhead (8-cycle SRAM read latency
  + 16-entry FIFO cold fill); after that, tile prefetch is issued
  tile_cycles - fifo_depth early and stays hidden. The activation core is
  8-lane and pipelined with writeback, max pools and elementwise ops are
  folded into writeback, so neither adds cycles.
- Zero-valued activation operands (including halo padding) gate the MAC
  and save its energy but not its issue slot; channel/position padding
  also issues as skipped slots. issued = executed + zero-skipped +
  padding-skipped always holds.

Energy is activity-based: coefficients (pJ) per activity class, shipped in
data/coefficients.json and reproducible with fit_coefficients().
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

from . import activations as acts
from . import fixed
from .fixed import ACT_FORMAT, SaturationCounters
from .network import DEFAULT_CONFIG, JaneEyeNet, ModelConfig, check_weights
from .validation import CapacityError, CoefficientError, ValidationError


class DataflowMode(str, Enum):
    WEIGHT_STATIONARY = "WS"
    OUTPUT_STATIONARY = "OS"
    ROW_STATIONARY = "RS"


FSM_STATES = (
    "IDLE", "LOAD_CONFIG", "LOAD_WEIGHTS", "LOAD_BIAS", "FETCH_TILE",
    "COMPUTE_WS", "COMPUTE_OS", "COMPUTE_RS", "ACTIVATE", "WRITEBACK",
    "MODE_SWITCH", "DONE",
)

ACTIVITY_CLASSES = (
    "mac", "sram_read_weight_byte", "sram_read_act_byte", "sram_read_bias_byte",
    "sram_write_act_byte", "weight_reg_write", "activation_op", "control_cycle",
)

# Relative (dimensionless) costs of the non-MAC classes; fit_coefficients
# scales them to picojoules against the calibration targets.
DEFAULT_RELATIVE_COSTS = {
    "sram_read_weight_byte": 1.0,
    "sram_read_act_byte": 1.0,
    "sram_read_bias_byte": 1.0,
    "sram_write_act_byte": 1.2,
    "weight_reg_write": 0.3,
    "activation_op": 2.0,
    "control_cycle": 10.0,
}

COEFFICIENTS_ENV = "JANEEYE_COEFFICIENTS"


@dataclass(frozen=True)
class PeArrayConfig:
    rows: int = 8
    cols: int = 8
    lanes_per_pe: int = 8            # input-channel lanes per PE
    weight_regs_per_pe: int = 9      # 3x3 resident; larger kernels rotate rows
    mac_latency_cycles: int = 1
    mode_switch_cycles: int = 2
    activation_lanes: int = 8
    clock_hz: int = 400_000_000
    tile_cycle_table: tuple = ((1, 8), (3, 64), (7, 392))

    def tile_cycles(self, kernel: int) -> int:
        for k, c in self.tile_cycle_table:
            if k == kernel:
                return c
        return 8 * kernel * kernel

    @property
    def positions(self) -> int:
        return self.rows * self.cols

    @property
    def peak_macs_per_cycle(self) -> int:
        return self.rows * self.cols * self.lanes_per_pe


@dataclass(frozen=True)
class MemoryConfig:
    weight_sram_bytes: int = 64 * 1024
    act_sram_bytes: int = 32 * 1024
    bias_sram_bytes: int = 4 * 1024
    tile_buffer_bytes: int = 4 * 1024
    sram_ports: int = 3
    sram_read_latency: int = 8
    fifo_depth: int = 16
    dram_bandwidth_bytes_per_s: float = 3.2e9

    @property
    def layer_overhead_cycles(self) -> int:
        # cold SRAM read + FIFO fill before the first tile of a layer
        return self.sram_read_latency + self.fifo_depth


DEFAULT_PE = PeArrayConfig()
DEFAULT_MEM = MemoryConfig()


@dataclass
class ScheduledOp:
    name: str
    op: str
    mode: DataflowMode
    kernel: int = 0
    stride: int = 1
    tiles: int = 0
    cin_groups: int = 0
    cout_groups: int = 0
    passes: int = 0
    tile_cycles: int = 0
    prefetch_issue: int = 0
    compute_cycles: int = 0
    overhead_cycles: int = 0
    real_positions: int = 0
    padded_positions: int = 0
    occupancy: float = 0.0
    real_macs: int = 0
    issued_slots: int = 0
    out_elements: int = 0
    weight_bytes: int = 0
    bias_bytes: int = 0
    act_live_bytes: int = 0
    tile_fetch_bytes: int = 0
    weight_read_bytes: int = 0
    act_read_bytes: int = 0
    bias_read_bytes: int = 0
    psum_writes: int = 0
    psum_reads: int = 0
    out_write_bytes: int = 0
    reg_writes: int = 0
    activation_ops: int = 0
    reuse_fraction: float = 0.0
    os_psum_writes: int = 0
    ws_equiv_psum_writes: int = 0

    @property
    def cycles(self) -> int:
        return self.compute_cycles + self.overhead_cycles

    def as_dict(self) -> dict:
        return {
            "name": self.name, "op": self.op, "mode": self.mode.value,
            "kernel": self.kernel, "tiles": self.tiles, "passes": self.passes,
            "cycles": self.cycles, "compute_cycles": self.compute_cycles,
            "overhead_cycles": self.overhead_cycles,
            "occupancy": round(self.occupancy, 6),
            "real_macs": self.real_macs, "issued_slots": self.issued_slots,
            "weight_bytes": self.weight_bytes,
            "act_live_bytes": self.act_live_bytes,
            "reuse_fraction": round(self.reuse_fraction, 6),
            "prefetch_issue": self.prefetch_issue,
        }


@dataclass
class Schedule:
    config: ModelConfig
    pe: PeArrayConfig
    mem: MemoryConfig
    ops: list = field(default_factory=list)
    setup_cycles: int = 0
    mode_switches: int = 0

    @property
    def compute_ops(self) -> list:
        return [o for o in self.ops if o.compute_cycles > 0]

    @property
    def frame_cycles(self) -> int:
        return (sum(o.cycles for o in self.ops)
                + self.mode_switches * self.pe.mode_switch_cycles)

    def utilization_avg(self) -> float:
        return sum(o.occupancy * o.compute_cycles for o in self.ops) / self.frame_cycles

    def activity_counts(self, zero_skipped: dict | None = None) -> dict:
        """Per-frame activity counts; zero_skipped maps op name -> gated MACs."""
        zero_skipped = zero_skipped or {}
        executed = sum(o.real_macs - zero_skipped.get(o.name, 0) for o in self.ops)
        return {
            "mac": executed,
            "sram_read_weight_byte": sum(o.weight_read_bytes for o in self.ops),
            "sram_read_act_byte": sum(o.act_read_bytes + 4 * o.psum_reads for o in self.ops),
            "sram_read_bias_byte": sum(o.bias_read_bytes for o in self.ops),
            "sram_write_act_byte": sum(4 * o.psum_writes + o.out_write_bytes for o in self.ops),
            "weight_reg_write": sum(o.reg_writes for o in self.ops),
            "activation_op": sum(o.activation_ops for o in self.ops),
            "control_cycle": self.frame_cycles,
        }

    def as_dict(self) -> dict:
        return {
            "frame_cycles": self.frame_cycles,
            "setup_cycles": self.setup_cycles,
            "mode_switches": self.mode_switches,
            "utilization_avg": round(self.utilization_avg(), 6),
            "ops": [o.as_dict() for o in self.ops],
        }


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _mode_for(spec) -> DataflowMode:
    if spec.block == "recurrent":
        return DataflowMode.OUTPUT_STATIONARY
    if spec.op == "fc":
        return DataflowMode.ROW_STATIONARY
    return DataflowMode.WEIGHT_STATIONARY


def build_schedule(config: ModelConfig = DEFAULT_CONFIG,
                   pe: PeArrayConfig = DEFAULT_PE,
                   mem: MemoryConfig = DEFAULT_MEM) -> Schedule:
    """Map every op of the model onto the array and check SRAM capacities.

    Raises CapacityError naming the layer and the overflow when weights,
    biases, live activations, or a tile exceed their buffers.
    """
    config.validate()
    sched = Schedule(config=config, pe=pe, mem=mem)
    specs = config.layer_specs()
    final_hw = config.backbone_specs()[-1].out_hw
    c_last = config.conv_channels[-1]
    state_bytes = c_last * final_hw[0] * final_hw[1] * 2
    gate_bytes = state_bytes
    overhead = mem.layer_overhead_cycles

    pooled_after = {}  # conv spec name -> pool spec for fused max pools
    for i, s in enumerate(specs):
        if s.op == "maxpool" and s.name == "pool":
            pooled_after[specs[i + 1].name] = None  # pool precedes its consumer
            # the pool actually consumes the previous conv's output
    # The backbone emits [conv1, conv2, pool, conv3]: the pool consumes conv2.
    fused_pool = {}
    prev = None
    for s in specs:
        if s.op == "maxpool" and s.name == "pool" and prev is not None:
            fused_pool[prev.name] = s
        prev = s

    first_conv = next(s for s in specs if s.op != "maxpool")
    expand_name = "gmlp.expand"
    gmlp_inserted = False
    seen_gates = 0

    for spec in specs:
        if spec.op == "maxpool":
            if spec.name == "head.pool":
                pool_row = ScheduledOp(
                    name=spec.name, op="pool", mode=DataflowMode.OUTPUT_STATIONARY,
                    out_elements=spec.out_channels,
                    act_read_bytes=spec.in_channels * spec.in_hw[0] * spec.in_hw[1] * 2,
                    out_write_bytes=spec.out_channels * 2,
                    act_live_bytes=state_bytes + spec.out_channels * 2,
                )
                sched.ops.append(pool_row)
            continue  # spatial pool fused into producer writeback

        mode = _mode_for(spec)
        k = max(spec.kernel, 1)
        if spec.op == "fc":
            tiles, cin_g, cout_g = 1, _ceil_div(spec.in_channels, pe.lanes_per_pe), 1
            passes = tiles * cin_g * cout_g
            real_pos, padded_pos = spec.out_channels, pe.rows
            span = 1
        else:
            tiles = _ceil_div(spec.out_hw[0], pe.rows) * _ceil_div(spec.out_hw[1], pe.cols)
            cin_g = _ceil_div(spec.in_channels, pe.lanes_per_pe)
            cout_g = 1 if spec.op == "depthwise" else _ceil_div(spec.out_channels, pe.cols)
            passes = tiles * cin_g * cout_g
            real_pos = spec.out_positions
            padded_pos = tiles * pe.positions
            span = (pe.rows - 1) * spec.stride + spec.kernel

        tile_cycles = pe.tile_cycles(k)
        elements = real_pos * spec.out_channels if spec.op != "fc" else spec.out_channels
        accum_depth = 1 if spec.op == "depthwise" else spec.in_channels
        accum_groups = 1 if spec.op == "depthwise" else _ceil_div(spec.in_channels, pe.lanes_per_pe)
        if mode is DataflowMode.WEIGHT_STATIONARY:
            psum_writes, psum_reads = elements * accum_depth, elements * (accum_depth - 1)
        elif mode is DataflowMode.OUTPUT_STATIONARY:
            psum_writes, psum_reads = elements * accum_groups, elements * (accum_groups - 1)
        else:
            psum_writes, psum_reads = elements, 0

        pool_spec = fused_pool.get(spec.name)
        out_elements = (pool_spec.out_channels * pool_spec.out_hw[0] * pool_spec.out_hw[1]
                        if pool_spec else elements)

        weight_per_pass = (pe.lanes_per_pe * k * k if spec.op == "depthwise"
                           else pe.lanes_per_pe * pe.cols * k * k)
        row = ScheduledOp(
            name=spec.name, op=spec.op, mode=mode, kernel=spec.kernel, stride=spec.stride,
            tiles=tiles, cin_groups=cin_g, cout_groups=cout_g, passes=passes,
            tile_cycles=tile_cycles,
            prefetch_issue=max(tile_cycles - mem.fifo_depth, 0),
            compute_cycles=passes * tile_cycles,
            overhead_cycles=0 if spec.op == "fc" else overhead,
            real_positions=real_pos, padded_positions=padded_pos,
            occupancy=real_pos / padded_pos,
            real_macs=spec.macs,
            issued_slots=passes * tile_cycles * pe.peak_macs_per_cycle,
            out_elements=out_elements,
            weight_bytes=int(np.prod(spec.weight_shape)) if spec.weight_shape else 0,
            bias_bytes=4 * spec.out_channels if spec.bias else 0,
            tile_fetch_bytes=span * span * 2,
            weight_read_bytes=passes * weight_per_pass,
            act_read_bytes=tiles * cout_g * span * span * spec.in_channels * 2,
            bias_read_bytes=tiles * cout_g * pe.cols * 4 if spec.bias else 0,
            psum_writes=psum_writes, psum_reads=psum_reads,
            out_write_bytes=out_elements * 2,
            reg_writes=passes * weight_per_pass,
            activation_ops=elements,
            reuse_fraction=(k * k - 1) / (k * k),
            os_psum_writes=elements * accum_groups,
            ws_equiv_psum_writes=elements * accum_depth,
        )

        # live activation bytes while this op runs (2-byte entries, persistent
        # recurrent state always resident, retired rows freed)
        in_b = spec.in_channels * spec.in_hw[0] * spec.in_hw[1] * 2
        out_b = elements * 2
        if spec.name == first_conv.name:
            in_b = spec.in_channels * spec.kernel * spec.in_hw[1] * 2  # streamed line buffer
        if pool_spec:
            # stride-1 producer with fused pool: input rows retire as fast as
            # pooled rows appear, so only one pooled row is live
            out_b = pool_spec.out_channels * pool_spec.out_hw[1] * 2
        if spec.block == "recurrent":
            if spec.op == "depthwise":
                extra = gate_bytes if seen_gates >= 1 else 0
                row.act_live_bytes = in_b + out_b + extra
            else:
                extra = gate_bytes if seen_gates >= 1 else 0
                row.act_live_bytes = in_b + out_b + state_bytes + gate_bytes + extra
                seen_gates += 1
        elif spec.op == "fc":
            row.act_live_bytes = in_b + out_b
        else:
            row.act_live_bytes = in_b + out_b + state_bytes
        sched.ops.append(row)

        if spec.name == expand_name:
            gmlp_inserted = True
            z_b = spec.out_channels * spec.out_hw[0] * spec.out_hw[1] * 2
            gated_b = z_b // 2
            sched.ops.append(ScheduledOp(
                name="gmlp.gate", op="elementwise", mode=mode,
                out_elements=gated_b // 2,
                act_read_bytes=z_b, out_write_bytes=gated_b,
                activation_ops=gated_b // 2,
                act_live_bytes=z_b + gated_b + state_bytes,
            ))
        if spec.block == "recurrent" and seen_gates == 2 and spec.op == "pointwise":
            el = c_last * final_hw[0] * final_hw[1]
            sched.ops.append(ScheduledOp(
                name="cell.update", op="elementwise", mode=mode,
                out_elements=el,
                act_read_bytes=3 * el * 2, out_write_bytes=el * 2,
                activation_ops=el,
                act_live_bytes=3 * el * 2,
            ))
            seen_gates = 3  # emit once

    # mode switches between consecutive compute ops
    last_mode, switches = None, 0
    for op in sched.ops:
        if op.compute_cycles == 0:
            continue
        if last_mode is not None and op.mode is not last_mode:
            switches += 1
        last_mode = op.mode
    sched.mode_switches = switches

    # one-time setup: config load + weight/bias DMA at the DRAM bandwidth
    total_weight = sum(o.weight_bytes for o in sched.ops)
    total_bias = sum(o.bias_bytes for o in sched.ops)
    bytes_per_cycle = mem.dram_bandwidth_bytes_per_s / pe.clock_hz
    sched.setup_cycles = 16 + _ceil_div(total_weight, int(bytes_per_cycle)) \
        + _ceil_div(total_bias, int(bytes_per_cycle))

    # capacity checks
    if total_weight > mem.weight_sram_bytes:
        raise CapacityError(
            f"weights need {total_weight} B, weight SRAM holds {mem.weight_sram_bytes} B "
            f"({total_weight - mem.weight_sram_bytes} B over)")
    if total_bias > mem.bias_sram_bytes:
        raise CapacityError(
            f"biases need {total_bias} B, bias SRAM holds {mem.bias_sram_bytes} B")
    for op in sched.ops:
        if op.act_live_bytes > mem.act_sram_bytes:
            raise CapacityError(
                f"{op.name}: {op.act_live_bytes} B of live activations exceed the "
                f"{mem.act_sram_bytes} B activation SRAM by "
                f"{op.act_live_bytes - mem.act_sram_bytes} B")
        if op.tile_fetch_bytes > mem.tile_buffer_bytes:
            raise CapacityError(
                f"{op.name}: input tile of {op.tile_fetch_bytes} B exceeds the "
                f"{mem.tile_buffer_bytes} B tile buffer")
    if not gmlp_inserted:
        raise ValidationError("schedule missing the gated mixing block")
    return sched


# --- energy ------------------------------------------------------------------

def fit_coefficients(counts: dict, energy_target_uj: float = 18.9,
                     cal_sparsity: float = 0.40, mac_share: float = 0.875,
                     relative_costs: dict | None = None) -> dict:
    """Solve activity coefficients (pJ) from two anchors: total dynamic
    energy per frame at the calibration zero-activation rate, and the MAC
    share of dynamic energy at zero sparsity.

    counts must be the dense (sparsity 0) per-frame activity counts.
    """
    rel = dict(DEFAULT_RELATIVE_COSTS if relative_costs is None else relative_costs)
    m0 = counts["mac"]
    if m0 <= 0:
        raise CoefficientError("cannot fit coefficients without MAC activity")
    nonmac_over_mac = (1.0 - mac_share) / mac_share
    alpha = energy_target_uj * 1e6 / (m0 * ((1.0 - cal_sparsity) + nonmac_over_mac))
    r0 = sum(rel[k] * counts[k] for k in rel)
    if r0 <= 0:
        raise CoefficientError("non-MAC activity counts are all zero")
    beta = alpha * m0 * nonmac_over_mac / r0
    coefficients = {"mac": alpha}
    coefficients.update({k: beta * rel[k] for k in rel})
    return coefficients


def load_coefficients(path=None) -> dict:
    """Coefficient source order: explicit path, JANEEYE_COEFFICIENTS env
    var, then the packaged defaults."""
    if path is None:
        path = os.environ.get(COEFFICIENTS_ENV)
    if path is None:
        text = resources.files("janeeye").joinpath("data/coefficients.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CoefficientError(f"unreadable coefficient file: {exc}") from None
    if doc.get("schema_version") != 1:
        raise CoefficientError(f"unsupported coefficient schema {doc.get('schema_version')!r}")
    if doc.get("unit") != "pJ":
        raise CoefficientError(f"coefficients must be in pJ, got {doc.get('unit')!r}")
    coefficients = doc.get("coefficients")
    if not isinstance(coefficients, dict):
        raise CoefficientError("coefficient file has no 'coefficients' table")
    return coefficients


def estimate_energy(counts: dict, coefficients: dict | None = None) -> dict:
    """counts (per activity class) x coefficients (pJ) -> energy breakdown.
    Returns per-class and total energy in microjoules."""
    if coefficients is None:
        coefficients = load_coefficients()
    by_class = {}
    for cls, count in counts.items():
        if cls not in coefficients:
            raise CoefficientError(f"no energy coefficient for activity class {cls!r}")
        by_class[cls] = count * coefficients[cls] * 1e-6  # pJ -> uJ
    return {"by_class_uj": by_class, "total_uj": sum(by_class.values())}


# --- tile-level datapath -----------------------------------------------------

def _tiled_conv(x_raw, w_raw, bias_raw, spec, pe: PeArrayConfig, counters, zero_ops):
    """Fixed-point conv executed tile by tile in schedule order. The
    per-element accumulation order (input channel, kernel row, kernel col,
    ascending) matches the whole-layer engine, so outputs are bit-identical.

    zero_ops is a single-element list accumulating gated MAC count."""
    cin, (ho, wo) = x_raw.shape[0], spec.out_hw
    s, k, p = spec.stride, spec.kernel, spec.padding
    xp = np.pad(x_raw, ((0, 0), (p, p), (p, p))) if p else x_raw
    acc = np.zeros((spec.out_channels, ho, wo), dtype=np.int64)
    depthwise = spec.op == "depthwise"
    for tr in range(_ceil_div(ho, pe.rows)):
        r0, r1 = tr * pe.rows, min((tr + 1) * pe.rows, ho)
        for tc in range(_ceil_div(wo, pe.cols)):
            c0, c1 = tc * pe.cols, min((tc + 1) * pe.cols, wo)
            if depthwise:
                for g0 in range(0, cin, pe.lanes_per_pe):
                    g1 = min(g0 + pe.lanes_per_pe, cin)
                    for kr in range(k):
                        for kc in range(k):
                            patch = xp[g0:g1, r0 * s + kr:(r1 - 1) * s + kr + 1:s,
                                       c0 * s + kc:(c1 - 1) * s + kc + 1:s]
                            zero_ops[0] += int(np.count_nonzero(patch == 0))
                            w_step = w_raw[g0:g1, 0, kr, kc].astype(np.int64)
                            acc[g0:g1, r0:r1, c0:c1] = fixed.mac(
                                acc[g0:g1, r0:r1, c0:c1],
                                w_step[:, None, None], patch, counters)
            else:
                for o0 in range(0, spec.out_channels, pe.cols):
                    o1 = min(o0 + pe.cols, spec.out_channels)
                    for ci in range(cin):  # ascending across lane groups
                        for kr in range(k):
                            for kc in range(k):
                                patch = xp[ci, r0 * s + kr:(r1 - 1) * s + kr + 1:s,
                                           c0 * s + kc:(c1 - 1) * s + kc + 1:s]
                                zero_ops[0] += int(np.count_nonzero(patch == 0)) * (o1 - o0)
                                w_step = w_raw[o0:o1, ci, kr, kc].astype(np.int64)
                                acc[o0:o1, r0:r1, c0:c1] = fixed.mac(
                                    acc[o0:o1, r0:r1, c0:c1],
                                    w_step[:, None, None], patch[None], counters)
    if bias_raw is not None:
        acc = fixed.add_bias(acc, bias_raw.astype(np.int64)[:, None, None], counters)
    return acc


def _tiled_fc(x_raw, w_raw, bias_raw, pe: PeArrayConfig, counters, zero_ops):
    acc = np.zeros(w_raw.shape[0], dtype=np.int64)
    for ci in range(w_raw.shape[1]):
        if x_raw[ci] == 0:
            zero_ops[0] += w_raw.shape[0]
        acc = fixed.mac(acc, w_raw[:, ci].astype(np.int64), x_raw[ci], counters)
    if bias_raw is not None:
        acc = fixed.add_bias(acc, bias_raw.astype(np.int64), counters)
    return fixed.truncate_to_activation(acc, counters)


def run_datapath(config: ModelConfig, qweights: dict, frames, pe: PeArrayConfig = DEFAULT_PE):
    """Run the deployed model through the tile-level engine.

    Returns (coords, capture, zero_ops) where capture mirrors the network
    engine's per-layer outputs and zero_ops counts gated MACs per op name
    (summed over frames)."""
    check_weights(config, qweights)
    from .network import maxpool_fixed  # shared primitive

    frames = np.asarray(frames)
    if frames.ndim == 3:
        frames = frames[None]
    capture: dict = {}
    zero_ops: dict = {}
    gate_table = {"forget": "hard_sigmoid", "cand": "hard_tanh"}
    final_hw = config.backbone_specs()[-1].out_hw
    state = np.zeros((config.conv_channels[-1],) + final_hw, dtype=np.int64)
    coords = np.zeros((len(frames), 2), dtype=np.float64)

    def store(name, arr):
        capture.setdefault(name, []).append(np.array(arr, copy=True))

    def conv_op(spec, x, with_bias=True, activation=None):
        z = [0]
        sat = SaturationCounters()
        bias = qweights.get(f"{spec.name}.bias") if with_bias else None
        acc = _tiled_conv(x, qweights[f"{spec.name}.weight"], bias, spec, pe, sat, z)
        out = fixed.truncate_to_activation(acc, sat)
        out = acts.apply_fixed(activation or spec.activation, out)
        zero_ops[spec.name] = zero_ops.get(spec.name, 0) + z[0]
        store(spec.name, out)
        return out

    for fi, frame in enumerate(frames):
        x = fixed.quantize(frame.astype(np.float64), ACT_FORMAT, SaturationCounters())
        store("input", x)
        for spec in config.backbone_specs():
            if spec.op == "maxpool":
                x = maxpool_fixed(x, spec.kernel)
                store(spec.name, x)
                continue
            x = conv_op(spec, x)

        def gmlp_block(x):
            expand, project = config.gmlp_specs(tuple(x.shape[1:]))
            z = conv_op(expand, x, activation="bypass")
            half = z.shape[0] // 2
            sat = SaturationCounters()
            gated = fixed.elementwise_mul(z[:half], acts.apply_fixed("relu", z[half:]), sat)
            return conv_op(project, gated, activation="bypass")

        def cell_block(x, state):
            hw = tuple(x.shape[1:])
            stacked = np.concatenate([x, state])
            gates = {}
            specs = config.gate_specs(hw, ("forget", "cand"))
            for gi, g in enumerate(("forget", "cand")):
                dw_spec, pw_spec = specs[2 * gi], specs[2 * gi + 1]
                mid = conv_op(dw_spec, stacked, with_bias=False, activation="bypass")
                gates[g] = conv_op(pw_spec, mid, activation=gate_table[g])
            sat = SaturationCounters()
            new_state = fixed.blend(gates["forget"], state, gates["cand"], sat)
            store("cell.update", new_state)
            state[...] = new_state
            return new_state

        if config.gmlp_after_recurrent:
            x = cell_block(x, state)
            x = gmlp_block(x)
        else:
            x = gmlp_block(x)
            x = cell_block(x, state)

        pool = x.max(axis=(1, 2))
        store("head.pool", pool)
        z = [0]
        out = _tiled_fc(pool, qweights["head.fc.weight"], qweights["head.fc.bias"],
                        pe, SaturationCounters(), z)
        zero_ops["head.fc"] = zero_ops.get("head.fc", 0) + z[0]
        store("head.fc", out)
        coords[fi] = fixed.dequantize(out, ACT_FORMAT) * config.output_scale
    return coords, capture, zero_ops


def verify_datapath(config: ModelConfig, qweights: dict, frames,
                    pe: PeArrayConfig = DEFAULT_PE) -> dict:
    """Bit-compare every layer output of the tile-level engine against the
    whole-layer network engine. Also returns measured zero-operand MACs."""
    net = JaneEyeNet(config=config, qweights=qweights, mode="fixed")
    golden_capture: dict = {}
    golden_coords, _ = net.predict_with_report(frames, capture=golden_capture)
    tiled_coords, tiled_capture, zero_ops = run_datapath(config, qweights, frames, pe)

    mismatched = []
    for name, golden_list in golden_capture.items():
        tiled_list = tiled_capture.get(name)
        if tiled_list is None or len(tiled_list) != len(golden_list):
            mismatched.append(name)
            continue
        for g, t in zip(golden_list, tiled_list):
            if not np.array_equal(np.asarray(g), np.asarray(t)):
                mismatched.append(name)
                break
    coords_match = np.array_equal(golden_coords, tiled_coords)
    return {
        "matches": not mismatched and coords_match,
        "mismatched_layers": mismatched,
        "coords_match": coords_match,
        "coords": tiled_coords,
        "zero_ops": zero_ops,
        "frames": int(np.asarray(frames).shape[0]) if np.asarray(frames).ndim == 4 else 1,
        "layers_compared": len(golden_capture),
    }


# --- simulation --------------------------------------------------------------

@dataclass
class SimReport:
    schedule: Schedule
    sparsity_mode: str
    sparsity: float
    zero_skipped: dict
    energy: dict
    fsm_trace: list
    datapath: dict | None = None

    @property
    def frame_cycles(self) -> int:
        return self.schedule.frame_cycles

    @property
    def latency_s(self) -> float:
        return self.frame_cycles / self.schedule.pe.clock_hz

    @property
    def latency_ms(self) -> float:
        return self.latency_s * 1e3

    @property
    def cold_latency_ms(self) -> float:
        return (self.frame_cycles + self.schedule.setup_cycles) / self.schedule.pe.clock_hz * 1e3

    @property
    def fps_sustained(self) -> float:
        return self.schedule.pe.clock_hz / self.frame_cycles

    @property
    def fps_from_latency(self) -> float:
        return self.schedule.pe.clock_hz / (self.frame_cycles + self.schedule.setup_cycles)

    @property
    def utilization_avg(self) -> float:
        return self.schedule.utilization_avg()

    def utilization_by_layer(self) -> dict:
        return {o.name: o.occupancy for o in self.schedule.compute_ops}

    def mac_counters(self) -> dict:
        issued = sum(o.issued_slots for o in self.schedule.ops)
        real = sum(o.real_macs for o in self.schedule.ops)
        zero = sum(self.zero_skipped.values())
        padding = issued - real
        executed = real - zero
        return {
            "issued_slots": issued,
            "executed": executed,
            "skipped_zero": zero,
            "skipped_padding": padding,
            "conserved": issued == executed + zero + padding,
        }

    def writeback_ratio(self) -> dict:
        rec = [o for o in self.schedule.ops
               if o.name.startswith("cell.") and o.op in ("depthwise", "pointwise")]
        os_w = sum(o.os_psum_writes for o in rec)
        ws_w = sum(o.ws_equiv_psum_writes for o in rec)
        return {"os_writes": os_w, "ws_equivalent_writes": ws_w,
                "ratio": os_w / ws_w if ws_w else 0.0}

    def prefetch_overlap(self) -> dict:
        tiled = [o for o in self.schedule.compute_ops if o.op != "fc"]
        total = sum(o.passes for o in tiled)
        cold = len(tiled)
        return {"total_fetches": total, "cold_fetches": cold,
                "overlap_fraction": 1.0 - cold / total if total else 0.0}

    def weight_reuse(self) -> dict:
        out = {}
        for o in self.schedule.compute_ops:
            if o.kernel >= 1:
                out[str(o.kernel)] = o.reuse_fraction
        return out

    @property
    def energy_total_uj(self) -> float:
        return self.energy["total_uj"]

    @property
    def mac_energy_uj(self) -> float:
        return self.energy["by_class_uj"]["mac"]

    @property
    def dynamic_power_mw(self) -> float:
        # informational: energy per frame over frame latency
        return self.energy_total_uj * 1e-6 / self.latency_s * 1e3

    def as_dict(self) -> dict:
        return {
            "cycles": self.frame_cycles,
            "setup_cycles": self.schedule.setup_cycles,
            "latency_ms": self.latency_ms,
            "cold_latency_ms": self.cold_latency_ms,
            "fps_sustained": self.fps_sustained,
            "fps_from_latency": self.fps_from_latency,
            "clock_hz": self.schedule.pe.clock_hz,
            "utilization_avg": self.utilization_avg,
            "utilization_by_layer": {k: round(v, 6) for k, v in self.utilization_by_layer().items()},
            "mode_switches": self.schedule.mode_switches,
            "sparsity_mode": self.sparsity_mode,
            "sparsity": self.sparsity,
            "mac_counters": self.mac_counters(),
            "writeback": self.writeback_ratio(),
            "prefetch": self.prefetch_overlap(),
            "weight_reuse_by_kernel": self.weight_reuse(),
            "energy_uj": self.energy["by_class_uj"],
            "energy_total_uj": self.energy_total_uj,
            "dynamic_power_mw": self.dynamic_power_mw,
            "datapath": ({k: v for k, v in self.datapath.items() if k != "coords"}
                         if self.datapath else None),
            "schedule": self.schedule.as_dict(),
            "fsm_trace": self.fsm_trace,
        }


def _fsm_trace(sched: Schedule) -> list:
    trace = []
    cycle = 0

    def emit(state, detail=""):
        trace.append({"state": state, "cycle": cycle, "detail": detail})

    emit("IDLE")
    cycle += 16
    emit("LOAD_CONFIG")
    bytes_per_cycle = int(sched.mem.dram_bandwidth_bytes_per_s / sched.pe.clock_hz)
    cycle += _ceil_div(sum(o.weight_bytes for o in sched.ops), bytes_per_cycle)
    emit("LOAD_WEIGHTS")
    cycle += _ceil_div(sum(o.bias_bytes for o in sched.ops), bytes_per_cycle)
    emit("LOAD_BIAS")
    last_mode = None
    for op in sched.ops:
        if op.compute_cycles == 0:
            if op.op in ("elementwise", "pool"):
                emit("ACTIVATE", f"{op.name} (fused)")
                emit("WRITEBACK", op.name)
            continue
        if last_mode is not None and op.mode is not last_mode:
            cycle += sched.pe.mode_switch_cycles
            emit("MODE_SWITCH", f"{last_mode.value}->{op.mode.value}")
        last_mode = op.mode
        if op.overhead_cycles:
            cycle += op.overhead_cycles
            emit("FETCH_TILE", f"{op.name} cold fill")
        cycle += op.compute_cycles
        emit(f"COMPUTE_{op.mode.value}", f"{op.name} {op.passes} passes")
        emit("ACTIVATE", f"{op.name} (pipelined)")
        emit("WRITEBACK", op.name)
    emit("DONE")
    return trace


def simulate(config: ModelConfig = DEFAULT_CONFIG,
             pe: PeArrayConfig = DEFAULT_PE,
             mem: MemoryConfig = DEFAULT_MEM,
             sparsity: float = 0.0,
             frames=None, qweights=None,
             coefficients: dict | None = None) -> SimReport:
    """Performance/energy simulation of one frame.

    With frames+qweights the zero-activation rate is measured by running the
    tile-level datapath (and cross-checking it against the network engine);
    otherwise `sparsity` is injected uniformly per layer. Zero-gated MACs
    save energy, never cycles."""
    if not 0.0 <= sparsity < 1.0:
        raise ValidationError(f"sparsity {sparsity} outside [0, 1)")
    sched = build_schedule(config, pe, mem)
    datapath = None
    if frames is not None:
        if qweights is None:
            raise ValidationError("measured sparsity needs quantized weights")
        datapath = verify_datapath(config, qweights, frames, pe)
        n = max(datapath["frames"], 1)
        zero_skipped = {o.name: int(round(datapath["zero_ops"].get(o.name, 0) / n))
                        for o in sched.ops}
        mode = "measured"
        real = sum(o.real_macs for o in sched.ops)
        sparsity = sum(zero_skipped.values()) / real if real else 0.0
    else:
        zero_skipped = {o.name: int(round(sparsity * o.real_macs)) for o in sched.ops}
        mode = "injected"
    counts = sched.activity_counts(zero_skipped)
    energy = estimate_energy(counts, coefficients)
    return SimReport(schedule=sched, sparsity_mode=mode, sparsity=sparsity,
                     zero_skipped=zero_skipped, energy=energy,
                     fsm_trace=_fsm_trace(sched), datapath=datapath)
