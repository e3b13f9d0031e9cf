"""Deployed-model container format.

Layout, little-endian throughout:

    bytes 0..7    magic "JANE0001"
    bytes 8..11   u32 header length N
    bytes 12..    UTF-8 JSON header (N bytes)
    ...           payload: tensor bytes back to back, offsets in the header
    last 4        u32 CRC-32 over header-length field + header + payload

The header carries the format version, the architecture config, the three
number formats, and a tensor manifest (name, dtype, shape, offset, nbytes).
Quantized tensors use their manifest names; optional float reference copies
are stored under a "ref." prefix and returned separately by load_model.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .fixed import ACC_FORMAT, ACT_FORMAT, WEIGHT_FORMAT
from .network import ModelConfig, check_weights
from .validation import ChecksumError, ModelFormatError

MODEL_MAGIC = b"JANE0001"
FORMAT_VERSION = 1

_DTYPES = {"int8": "<i1", "int32": "<i4", "float32": "<f4"}


@dataclass
class ModelBundle:
    config: ModelConfig
    qweights: dict
    weights: dict = field(default_factory=dict)  # optional float references


def _config_header(config: ModelConfig) -> dict:
    return {
        "input_hw": list(config.input_hw),
        "in_channels": config.in_channels,
        "conv_channels": list(config.conv_channels),
        "conv_kernels": list(config.conv_kernels),
        "conv_strides": list(config.conv_strides),
        "pool_factor": config.pool_factor,
        "gmlp_expand": config.gmlp_expand,
        "gmlp_after_recurrent": config.gmlp_after_recurrent,
        "gate_kernel": config.gate_kernel,
        "output_scale": config.output_scale,
        "sensor_scale": config.sensor_scale,
    }


def _config_from_header(d: dict) -> ModelConfig:
    try:
        return ModelConfig(
            input_hw=tuple(d["input_hw"]),
            in_channels=d["in_channels"],
            conv_channels=tuple(d["conv_channels"]),
            conv_kernels=tuple(d["conv_kernels"]),
            conv_strides=tuple(d["conv_strides"]),
            pool_factor=d["pool_factor"],
            gmlp_expand=d["gmlp_expand"],
            gmlp_after_recurrent=d["gmlp_after_recurrent"],
            gate_kernel=d["gate_kernel"],
            output_scale=d["output_scale"],
            sensor_scale=d["sensor_scale"],
        )
    except KeyError as exc:
        raise ModelFormatError(f"model header missing config field {exc}") from None


def _fmt(fmt) -> dict:
    return {"int_bits": fmt.int_bits, "frac_bits": fmt.frac_bits}


def save_model(path, config: ModelConfig, qweights: dict, weights: dict | None = None) -> None:
    """Write a model container; qweights must match the config manifest."""
    check_weights(config, qweights)
    tensors = []
    payload = bytearray()

    def add(name, arr, dtype):
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        tensors.append({
            "name": name,
            "dtype": dtype,
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": arr.nbytes,
        })
        payload.extend(arr.tobytes())

    for name, _ in config.weight_manifest():
        add(name, qweights[name], "int32" if name.endswith(".bias") else "int8")
    if weights:
        for name in sorted(weights):
            add(f"ref.{name}", weights[name], "float32")

    header = {
        "format_version": FORMAT_VERSION,
        "config": _config_header(config),
        "weight_format": _fmt(WEIGHT_FORMAT),
        "activation_format": _fmt(ACT_FORMAT),
        "accumulator_format": _fmt(ACC_FORMAT),
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = struct.pack("<I", len(header_bytes)) + header_bytes + bytes(payload)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_model(path) -> ModelBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MODEL_MAGIC) + 8:
        raise ModelFormatError(f"model file too short ({len(blob)} bytes)")
    if blob[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {blob[:8]!r}, expected {MODEL_MAGIC!r}")

    body, crc_bytes = blob[8:-4], blob[-4:]
    stored_crc = struct.unpack("<I", crc_bytes)[0]
    actual_crc = zlib.crc32(body) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"checksum mismatch: stored 0x{stored_crc:08x}, computed 0x{actual_crc:08x}")

    header_len = struct.unpack_from("<I", body, 0)[0]
    if 4 + header_len > len(body):
        raise ModelFormatError(
            f"truncated header: declared {header_len} bytes, {len(body) - 4} available")
    try:
        header = json.loads(body[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model header: {exc}") from None

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version!r}")
    for key, fmt in (("weight_format", WEIGHT_FORMAT),
                     ("activation_format", ACT_FORMAT),
                     ("accumulator_format", ACC_FORMAT)):
        if header.get(key) != _fmt(fmt):
            raise ModelFormatError(f"{key} {header.get(key)} not supported by this datapath")

    config = _config_from_header(header.get("config", {}))
    payload = body[4 + header_len:]
    qweights: dict = {}
    refs: dict = {}
    for entry in header["tensors"]:
        name, dtype = entry["name"], entry["dtype"]
        if dtype not in _DTYPES:
            raise ModelFormatError(f"tensor {name!r} has unknown dtype {dtype!r}")
        off, nbytes = entry["offset"], entry["nbytes"]
        if off + nbytes > len(payload):
            raise ModelFormatError(
                f"tensor {name!r} extends to byte {off + nbytes}, payload has {len(payload)}")
        arr = np.frombuffer(payload[off:off + nbytes], dtype=_DTYPES[dtype])
        expect = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        if arr.size != expect:
            raise ModelFormatError(
                f"tensor {name!r} has {arr.size} elements, shape {entry['shape']} needs {expect}")
        arr = arr.reshape(entry["shape"]).copy()
        if name.startswith("ref."):
            refs[name[4:]] = arr
        else:
            qweights[name] = arr

    try:
        check_weights(config, qweights)
    except Exception as exc:
        raise ModelFormatError(f"tensor set does not match architecture: {exc}") from None
    return ModelBundle(config=config, qweights=qweights, weights=refs)
