"""Input validation helpers shared by the pipeline stages.

Small check_* functions in the spirit of sklearn's check_array: validate,
normalize dtype/shape, and raise ValidationError with a machine-readable code.
"""
from __future__ import annotations

import numpy as np


class JaneEyeError(Exception):
    """Base error. `code` is a stable machine-readable identifier."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(JaneEyeError):
    code = "invalid_input"


class EventParseError(JaneEyeError):
    code = "event_parse"


class ModelFormatError(JaneEyeError):
    code = "model_format"


class ChecksumError(ModelFormatError):
    code = "model_checksum"


class CapacityError(JaneEyeError):
    code = "sram_capacity"


class CoefficientError(JaneEyeError):
    code = "energy_coefficients"


EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])


def check_events(events, sensor_size=(640, 480)) -> np.ndarray:
    """Validate an event array and return it with the canonical dtype.

    Events must carry monotonically non-decreasing timestamps, polarities in
    {-1, +1}, and coordinates inside the sensor.
    """
    arr = np.asarray(events)
    if arr.dtype != EVENT_DTYPE:
        try:
            arr = np.array(
                [tuple(rec) for rec in arr.tolist()] if arr.dtype.fields is None else arr,
                dtype=EVENT_DTYPE,
            )
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"cannot interpret input as events: {exc}")
    w, h = sensor_size
    if arr.size:
        t = arr["t"]
        if np.any(t[1:] < t[:-1]):
            i = int(np.argmax(t[1:] < t[:-1]))
            raise ValidationError(
                f"timestamp regression at record {i + 1}: "
                f"{int(t[i + 1])} < {int(t[i])}",
                code="timestamp_regression",
            )
        if np.any((arr["x"] >= w) | (arr["y"] >= h)):
            i = int(np.argmax((arr["x"] >= w) | (arr["y"] >= h)))
            raise ValidationError(
                f"event {i} at ({int(arr['x'][i])}, {int(arr['y'][i])}) outside "
                f"{w}x{h} sensor",
                code="coordinate_bounds",
            )
        bad = ~np.isin(arr["p"], (-1, 1))
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ValidationError(
                f"event {i} has polarity {int(arr['p'][i])}, expected -1 or +1",
                code="polarity",
            )
    return arr


def check_frame_array(channels) -> np.ndarray:
    """Validate a (3, H, W) integer channel stack."""
    arr = np.asarray(channels)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"expected (3, H, W) channel stack, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"frame channels must be integers, got {arr.dtype}")
    return arr.astype(np.int64)


def check_positive_int(value, name) -> int:
    v = int(value)
    if v <= 0:
        raise ValidationError(f"{name} must be a positive integer, got {value}")
    return v


def check_divisible(value, by, name) -> int:
    v = int(value)
    if v % by != 0:
        raise ValidationError(f"{name}={v} must be divisible by {by}")
    return v
