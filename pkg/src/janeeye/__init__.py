"""Event-based eye tracking: aggregation, fixed-point inference, and a
cycle-approximate accelerator model."""

__version__ = "0.1.0"

from .accel import (
    DataflowMode,
    MemoryConfig,
    PeArrayConfig,
    Schedule,
    SimReport,
    build_schedule,
    estimate_energy,
    fit_coefficients,
    load_coefficients,
    run_datapath,
    simulate,
    verify_datapath,
)
from .activations import (
    FIXED_ACTIVATIONS,
    REFERENCE_ACTIVATIONS,
    apply_fixed,
    apply_reference,
    approximation_error,
)
from .events import (
    CountAggregator,
    EventFrame,
    SpatialDownsampler,
    TimeWindowAggregator,
    aggregate_count,
    aggregate_time,
    downsample_channels,
    downsample_frame,
    frames_to_stack,
    load_events,
    parse_events_binary,
    parse_events_csv,
    read_frame_dump,
    write_events_binary,
    write_events_csv,
    write_frame_dump,
)
from .fixed import (
    ACC_FORMAT,
    ACT_FORMAT,
    WEIGHT_FORMAT,
    QFormat,
    SaturationCounters,
    dequantize,
    quantize,
)
from .model_io import ModelBundle, load_model, save_model
from .network import (
    DEFAULT_CONFIG,
    CounterReport,
    JaneEyeNet,
    LayerSpec,
    ModelConfig,
    init_weights,
    search_default_config,
)
from .quantize import QuantReport, calibrate_ranges, quantize_model
from .validation import (
    CapacityError,
    ChecksumError,
    CoefficientError,
    EventParseError,
    JaneEyeError,
    ModelFormatError,
    ValidationError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
