"""Event stream I/O, frame aggregation, and spatial downsampling.

Events are (t_us, x, y, p) records with integer microsecond timestamps and
polarity in {-1, +1}. Two aggregation modes build 3-channel count frames:

* time mode: frame k holds events with t in (t0 + k*dt, t0 + (k+1)*dt]
  (left-open, right-closed), empty windows included;
* count mode: consecutive groups of exactly n_events, trailing partial
  group dropped, so the implied frame rate is event_rate / n_events.

Channels are positive count, negative count, and signed sum (ch0 - ch1).
Frames accumulate at sensor resolution and are reduced 8x by an aligned
box mean with round-half-to-even.

File formats (little-endian):
* CSV events: ``t_us,x,y,p`` rows, ``#`` comments.
* Binary events: magic ``JEVT0001`` then packed 13-byte records
  ``<u64 t, u16 x, u16 y, i8 p>``.
* Frame dump: per frame, magic ``JFRM0001``, u16 H, u16 W, u16 C, then
  C*H*W int32 values channel-major; multi-frame files concatenate records.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import (
    EVENT_DTYPE,
    EventParseError,
    ValidationError,
    check_divisible,
    check_events,
    check_frame_array,
    check_positive_int,
)

EVENT_MAGIC = b"JEVT0001"
FRAME_MAGIC = b"JFRM0001"
_EVENT_STRUCT = struct.Struct("<QHHb")  # 13 bytes per record

DEFAULT_SENSOR = (640, 480)
DEFAULT_DT_US = 10_000
DEFAULT_COUNT = 5_000
DOWNSAMPLE_FACTOR = 8


@dataclass(frozen=True)
class WindowInfo:
    """Provenance of one aggregated frame."""

    kind: str                      # "time" or "count"
    index: int
    t_start_us: Optional[int] = None   # time mode: window is (t_start, t_start+dt]
    dt_us: Optional[int] = None
    first_event: Optional[int] = None  # count mode: [first_event, first_event+n)
    n_events: Optional[int] = None


@dataclass
class EventFrame:
    """3-channel count frame: (positive, negative, signed = ch0 - ch1)."""

    channels: np.ndarray           # (3, H, W) int32
    window: WindowInfo
    sensor_size: tuple = DEFAULT_SENSOR

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    def validate(self) -> None:
        check_frame_array(self.channels)
        if np.any(self.channels[0] < 0) or np.any(self.channels[1] < 0):
            raise ValidationError("count channels must be non-negative")
        if np.any(self.channels[2] != self.channels[0].astype(np.int64) - self.channels[1]):
            raise ValidationError("channel 2 must equal channel 0 - channel 1")


# --- parsing ------------------------------------------------------------

def parse_events_csv(source, sensor_size=DEFAULT_SENSOR) -> np.ndarray:
    """Parse ``t_us,x,y,p`` CSV text; '#' starts a comment line."""
    try:
        if hasattr(source, "read"):
            lines = source.read().splitlines()
        else:
            with open(source, "r") as fh:
                lines = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise EventParseError(f"not a text file: {exc}") from None
    records = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split(",")
        if len(parts) != 4:
            raise EventParseError(f"line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise EventParseError(f"line {lineno}: non-integer field in {text!r}") from None
        if t < 0:
            raise EventParseError(f"line {lineno}: negative timestamp {t}")
        records.append((t, x, y, p))
    arr = np.array(records, dtype=EVENT_DTYPE) if records else np.empty(0, dtype=EVENT_DTYPE)
    try:
        return check_events(arr, sensor_size)
    except ValidationError as exc:
        raise EventParseError(str(exc), code=exc.code) from None


def write_events_csv(path, events) -> None:
    events = check_events(events)
    with open(path, "w") as fh:
        fh.write("# t_us,x,y,p\n")
        for rec in events:
            fh.write(f"{int(rec['t'])},{int(rec['x'])},{int(rec['y'])},{int(rec['p'])}\n")


def parse_events_binary(source, sensor_size=DEFAULT_SENSOR) -> np.ndarray:
    """Parse the packed binary event format (magic JEVT0001)."""
    if hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    if blob[: len(EVENT_MAGIC)] != EVENT_MAGIC:
        raise EventParseError(
            f"bad magic {blob[:8]!r}, expected {EVENT_MAGIC!r}", code="event_magic"
        )
    body = blob[len(EVENT_MAGIC):]
    if len(body) % _EVENT_STRUCT.size != 0:
        raise EventParseError(
            f"truncated record at byte offset {len(EVENT_MAGIC) + len(body) - (len(body) % _EVENT_STRUCT.size)}"
        )
    n = len(body) // _EVENT_STRUCT.size
    raw = np.frombuffer(
        body,
        dtype=np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")]),
        count=n,
    )
    arr = np.array(raw, dtype=EVENT_DTYPE)
    try:
        return check_events(arr, sensor_size)
    except ValidationError as exc:
        raise EventParseError(str(exc), code=exc.code) from None


def write_events_binary(path, events) -> None:
    events = check_events(events)
    with open(path, "wb") as fh:
        fh.write(EVENT_MAGIC)
        fh.write(events.astype(EVENT_DTYPE).tobytes())


def load_events(path, fmt="auto", sensor_size=DEFAULT_SENSOR) -> np.ndarray:
    """Load events from CSV or binary; fmt='auto' sniffs the magic."""
    if fmt == "auto":
        with open(path, "rb") as fh:
            head = fh.read(len(EVENT_MAGIC))
        fmt = "binary" if head == EVENT_MAGIC else "csv"
    if fmt == "binary":
        return parse_events_binary(path, sensor_size)
    if fmt == "csv":
        return parse_events_csv(path, sensor_size)
    raise ValidationError(f"unknown event format {fmt!r}")


# --- aggregation --------------------------------------------------------

def accumulate(events, sensor_size=DEFAULT_SENSOR) -> np.ndarray:
    """Scatter one event slice into a (3, H, W) count stack."""
    w, h = sensor_size
    channels = np.zeros((3, h, w), dtype=np.int32)
    if len(events):
        pos = events["p"] == 1
        np.add.at(channels[0], (events["y"][pos], events["x"][pos]), 1)
        np.add.at(channels[1], (events["y"][~pos], events["x"][~pos]), 1)
        channels[2] = channels[0] - channels[1]
    return channels


def iter_time_frames(
    events, dt_us=DEFAULT_DT_US, t0_us=None, sensor_size=DEFAULT_SENSOR
) -> Iterator[EventFrame]:
    """Yield frames for consecutive (t0+k*dt, t0+(k+1)*dt] windows.

    Default t0 is one microsecond before the first event so window 0 starts
    at the stream. Every window up to the last event is emitted, empty ones
    as all-zero frames.
    """
    events = check_events(events, sensor_size)
    dt_us = check_positive_int(dt_us, "dt_us")
    if len(events) == 0:
        return
    t = events["t"].astype(np.int64)
    if t0_us is None:
        t0_us = int(t[0]) - 1
    if t[0] <= t0_us:
        raise ValidationError(f"t0_us={t0_us} must precede the first event at {int(t[0])}")
    idx = (t - t0_us - 1) // dt_us
    n_frames = int(idx[-1]) + 1
    bounds = np.searchsorted(idx, np.arange(n_frames + 1))
    for k in range(n_frames):
        info = WindowInfo("time", k, t_start_us=int(t0_us + k * dt_us), dt_us=dt_us)
        yield EventFrame(accumulate(events[bounds[k]:bounds[k + 1]], sensor_size), info, sensor_size)


def iter_count_frames(events, n_events=DEFAULT_COUNT, sensor_size=DEFAULT_SENSOR) -> Iterator[EventFrame]:
    """Yield frames of exactly n_events each; the trailing partial group is
    dropped, so a stream of N events yields floor(N / n_events) frames."""
    events = check_events(events, sensor_size)
    n_events = check_positive_int(n_events, "n_events")
    for k in range(len(events) // n_events):
        info = WindowInfo("count", k, first_event=k * n_events, n_events=n_events)
        yield EventFrame(accumulate(events[k * n_events:(k + 1) * n_events], sensor_size), info, sensor_size)


def aggregate_time(events, dt_us=DEFAULT_DT_US, t0_us=None, sensor_size=DEFAULT_SENSOR):
    return list(iter_time_frames(events, dt_us, t0_us, sensor_size))


def aggregate_count(events, n_events=DEFAULT_COUNT, sensor_size=DEFAULT_SENSOR):
    return list(iter_count_frames(events, n_events, sensor_size))


# --- downsampling -------------------------------------------------------

def _round_half_even_div(sums: np.ndarray, divisor: int) -> np.ndarray:
    """Exact round-half-to-even of integer sums / divisor, both signs."""
    q = sums // divisor
    r = sums - q * divisor
    two_r = 2 * r
    up = (two_r > divisor) | ((two_r == divisor) & ((q & 1) == 1))
    return (q + up).astype(np.int64)


def downsample_channels(channels: np.ndarray, factor=DOWNSAMPLE_FACTOR) -> np.ndarray:
    """Aligned factor x factor box mean per channel, round half to even.

    Channel 2 is recomputed as ch0 - ch1 after rounding so the frame
    invariant survives (independent rounding can break it by 1).
    """
    arr = check_frame_array(channels)
    _, h, w = arr.shape
    check_divisible(h, factor, "height")
    check_divisible(w, factor, "width")
    blocks = arr.reshape(3, h // factor, factor, w // factor, factor)
    sums = blocks.sum(axis=(2, 4), dtype=np.int64)
    out = _round_half_even_div(sums, factor * factor)
    out[2] = out[0] - out[1]
    return out.astype(np.int32)


def downsample_frame(frame: EventFrame, factor=DOWNSAMPLE_FACTOR) -> EventFrame:
    return EventFrame(downsample_channels(frame.channels, factor), frame.window, frame.sensor_size)


# --- frame dump ---------------------------------------------------------

def write_frame_dump(path_or_file, frames: Iterable) -> int:
    """Write frames (EventFrame or (3,H,W) arrays) as concatenated records.
    Returns the number of frames written."""
    own = not hasattr(path_or_file, "write")
    fh = open(path_or_file, "wb") if own else path_or_file
    n = 0
    try:
        for frame in frames:
            arr = frame.channels if isinstance(frame, EventFrame) else np.asarray(frame)
            arr = check_frame_array(arr).astype("<i4")
            c, h, w = arr.shape
            fh.write(FRAME_MAGIC)
            fh.write(struct.pack("<HHH", h, w, c))
            fh.write(arr.tobytes())  # channel-major planar
            n += 1
    finally:
        if own:
            fh.close()
    return n


def read_frame_dump(path_or_file) -> list:
    """Read concatenated frame records; returns a list of (3,H,W) int32."""
    own = not hasattr(path_or_file, "read")
    fh = open(path_or_file, "rb") if own else path_or_file
    try:
        blob = fh.read()
    finally:
        if own:
            fh.close()
    frames = []
    offset = 0
    header = len(FRAME_MAGIC) + 6
    while offset < len(blob):
        if blob[offset:offset + len(FRAME_MAGIC)] != FRAME_MAGIC:
            raise EventParseError(
                f"bad frame magic at byte {offset}", code="frame_magic"
            )
        h, w, c = struct.unpack_from("<HHH", blob, offset + len(FRAME_MAGIC))
        nbytes = c * h * w * 4
        if offset + header + nbytes > len(blob):
            raise EventParseError(f"truncated frame payload at byte {offset + header}")
        plane = np.frombuffer(blob, dtype="<i4", count=c * h * w, offset=offset + header)
        frames.append(plane.reshape(c, h, w).copy())
        offset += header + nbytes
    return frames


def frames_to_stack(frames) -> np.ndarray:
    """List of frames -> (N, 3, H, W) int32 stack for the network."""
    arrs = [f.channels if isinstance(f, EventFrame) else np.asarray(f) for f in frames]
    if not arrs:
        raise ValidationError("no frames given")
    return np.stack([check_frame_array(a).astype(np.int32) for a in arrs])


# --- estimator-shaped wrappers -----------------------------------------

class TimeWindowAggregator(BaseEstimator, TransformerMixin):
    """Transformer: event array -> list of EventFrame over fixed time windows."""

    def __init__(self, dt_us=DEFAULT_DT_US, t0_us=None, sensor_size=DEFAULT_SENSOR):
        self.dt_us = dt_us
        self.t0_us = t0_us
        self.sensor_size = sensor_size

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return aggregate_time(X, self.dt_us, self.t0_us, self.sensor_size)


class CountAggregator(BaseEstimator, TransformerMixin):
    """Transformer: event array -> list of EventFrame over fixed-size groups."""

    def __init__(self, n_events=DEFAULT_COUNT, sensor_size=DEFAULT_SENSOR):
        self.n_events = n_events
        self.sensor_size = sensor_size

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return aggregate_count(X, self.n_events, self.sensor_size)


class SpatialDownsampler(BaseEstimator, TransformerMixin):
    """Transformer: list of EventFrame -> list of EventFrame, factor x smaller."""

    def __init__(self, factor=DOWNSAMPLE_FACTOR):
        self.factor = factor

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [downsample_frame(f, self.factor) for f in X]
