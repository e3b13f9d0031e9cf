"""Command line front end.

Subcommands: aggregate, init-model, quantize, infer, simulate, calibrate.
Every run emits one JSON report document:

    {"schema_version": 1,
     "manifest": {"subcommand": ..., "args": {...}},
     "results": {...},
     "counters": {...}}        # when the run produces counters

Failures print {"error": {"code": ..., "message": ...}} and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__, accel, events, model_io, network, quantize
from .validation import JaneEyeError, ValidationError

SCHEMA_VERSION = 1


def _report(args, results, counters=None) -> dict:
    manifest = {"subcommand": args.command, "version": __version__,
                "args": {k: v for k, v in sorted(vars(args).items())
                         if k not in ("command", "func") and v is not None}}
    doc = {"schema_version": SCHEMA_VERSION, "manifest": manifest, "results": results}
    if counters is not None:
        doc["counters"] = counters
    return doc


def _emit(doc, path=None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, default=_jsonable)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# --- subcommands -------------------------------------------------------------

def cmd_aggregate(args) -> dict:
    evts = events.load_events(args.input, fmt=args.format)
    if args.mode == "time":
        frames = events.aggregate_time(evts, dt_us=args.dt_us, t0_us=args.t0_us)
    else:
        frames = events.aggregate_count(evts, n_events=args.count)
    if not args.no_downsample:
        frames = [events.downsample_frame(f) for f in frames]
    n = events.write_frame_dump(args.output, frames)
    duration_us = int(evts["t"][-1] - evts["t"][0]) if len(evts) else 0
    results = {
        "events": int(len(evts)),
        "frames": n,
        "mode": args.mode,
        "duration_us": duration_us,
        "event_rate_hz": len(evts) / duration_us * 1e6 if duration_us else 0.0,
        "frame_shape": list(frames[0].channels.shape) if frames else None,
        "output": str(args.output),
    }
    if args.mode == "count":
        results["dropped_tail_events"] = int(len(evts) - n * args.count)
        results["frame_rate_hz"] = (results["event_rate_hz"] / args.count
                                    if duration_us else 0.0)
    else:
        results["dt_us"] = args.dt_us
        results["frame_rate_hz"] = 1e6 / args.dt_us
    return _report(args, results)


def cmd_init_model(args) -> dict:
    config = network.DEFAULT_CONFIG
    weights = network.init_weights(config, seed=args.seed)
    qweights, qreport = quantize.quantize_model(weights, config)
    model_io.save_model(args.output, config, qweights,
                        weights=weights if args.store_float else None)
    results = {
        "output": str(args.output),
        "seed": args.seed,
        "params": config.param_count(),
        "macs_per_frame": config.mac_count(),
        "stored_float_refs": bool(args.store_float),
    }
    return _report(args, results, counters=qreport.as_dict())


def cmd_quantize(args) -> dict:
    if str(args.input).endswith(".npz"):
        with np.load(args.input) as npz:
            weights = {k: npz[k] for k in npz.files}
        config = network.DEFAULT_CONFIG
    else:
        bundle = model_io.load_model(args.input)
        if not bundle.weights:
            raise ValidationError(
                "input model carries no float reference tensors to quantize",
                code="missing_tensor")
        weights, config = bundle.weights, bundle.config
    qweights, qreport = quantize.quantize_model(weights, config)
    model_io.save_model(args.output, config, qweights,
                        weights=weights if args.store_float else None)
    return _report(args, {"output": str(args.output)}, counters=qreport.as_dict())


def cmd_infer(args) -> dict:
    bundle = model_io.load_model(args.model)
    stack = events.frames_to_stack(events.read_frame_dump(args.frames))
    if args.engine == "fixed":
        net = network.JaneEyeNet(config=bundle.config, qweights=bundle.qweights, mode="fixed")
    else:
        if not bundle.weights:
            raise ValidationError("model carries no float reference tensors",
                                  code="missing_tensor")
        net = network.JaneEyeNet(config=bundle.config, weights=bundle.weights,
                                 mode="reference", reference_activations=args.activations)
    coords, report = net.predict_with_report(stack)
    if args.sensor_coords:
        coords = net.to_sensor_coords(coords)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write("frame_idx,x,y\n")
            for i, (x, y) in enumerate(coords):
                fh.write(f"{i},{x:.6f},{y:.6f}\n")
    results = {
        "frames": int(stack.shape[0]),
        "engine": args.engine,
        "coords": coords,
        "coordinate_space": "sensor" if args.sensor_coords else "frame",
        "output": str(args.output) if args.output else None,
    }
    return _report(args, results, counters=report.as_dict())


def cmd_simulate(args) -> dict:
    if args.model:
        bundle = model_io.load_model(args.model)
        config, qweights = bundle.config, bundle.qweights
    else:
        config, qweights = network.DEFAULT_CONFIG, None
    coefficients = accel.load_coefficients(args.coefficients)
    frames = None
    if args.frames:
        if qweights is None:
            raise ValidationError("--frames needs --model for the measured datapath run")
        frames = events.frames_to_stack(events.read_frame_dump(args.frames))
    report = accel.simulate(config=config, sparsity=args.sparsity,
                            frames=frames, qweights=qweights,
                            coefficients=coefficients)
    results = report.as_dict()
    if not args.trace:
        results.pop("fsm_trace")
    return _report(args, results)


def cmd_calibrate(args) -> dict:
    sched = accel.build_schedule(network.DEFAULT_CONFIG)
    counts = sched.activity_counts()
    coefficients = accel.fit_coefficients(
        counts, energy_target_uj=args.energy_target_uj,
        cal_sparsity=args.cal_sparsity, mac_share=args.mac_share)
    doc = {
        "schema_version": 1,
        "unit": "pJ",
        "coefficients": coefficients,
        "calibration": {
            "energy_target_uj": args.energy_target_uj,
            "cal_sparsity": args.cal_sparsity,
            "mac_share": args.mac_share,
            "frame_macs": counts["mac"],
        },
    }
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return _report(args, {"output": str(args.output), "coefficients": coefficients})


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="janeeye",
        description="Event-based eye tracking: aggregation, fixed-point inference, "
                    "and accelerator performance/energy modeling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="events -> count-map frame dump")
    p.add_argument("--input", required=True, help="event file (CSV or binary)")
    p.add_argument("--format", choices=("auto", "csv", "binary"), default="auto")
    p.add_argument("--mode", choices=("time", "count"), default="time")
    p.add_argument("--dt-us", type=int, default=events.DEFAULT_DT_US,
                   help="time window length in microseconds")
    p.add_argument("--t0-us", type=int, default=None,
                   help="window origin; default: just before the first event")
    p.add_argument("--count", type=int, default=events.DEFAULT_COUNT,
                   help="events per frame in count mode")
    p.add_argument("--no-downsample", action="store_true",
                   help="keep full sensor resolution")
    p.add_argument("--output", required=True, help="frame dump path")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("init-model", help="seeded synthetic model file")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--store-float", action="store_true",
                   help="embed float reference tensors")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("quantize", help="float weights -> quantized model file")
    p.add_argument("--input", required=True,
                   help="model file with float refs, or a .npz of float tensors")
    p.add_argument("--output", required=True)
    p.add_argument("--store-float", action="store_true")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", help="run the network over a frame dump")
    p.add_argument("--model", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--engine", choices=("fixed", "reference"), default="fixed")
    p.add_argument("--activations", choices=("smooth", "hardware"), default="smooth",
                   help="reference-engine activation set")
    p.add_argument("--sensor-coords", action="store_true",
                   help="report coordinates at sensor resolution")
    p.add_argument("--output", default=None, help="coordinate CSV path")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="accelerator performance/energy model")
    p.add_argument("--model", default=None, help="model file (default architecture otherwise)")
    p.add_argument("--sparsity", type=float, default=0.4,
                   help="injected zero-activation rate (measured operating point)")
    p.add_argument("--frames", default=None,
                   help="frame dump: measure sparsity by running the datapath")
    p.add_argument("--coefficients", default=None, help="energy coefficient JSON")
    p.add_argument("--trace", action="store_true", help="include the FSM trace")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit energy coefficients and write JSON")
    p.add_argument("--energy-target-uj", type=float, default=18.9)
    p.add_argument("--cal-sparsity", type=float, default=0.40)
    p.add_argument("--mac-share", type=float, default=0.875)
    p.add_argument("--output", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        doc = args.func(args)
    except JaneEyeError as exc:
        _emit({"error": {"code": exc.code, "message": str(exc)}})
        return 1
    except OSError as exc:
        _emit({"error": {"code": "io", "message": str(exc)}})
        return 1
    _emit(doc, getattr(args, "report", None))
    return 0


if __name__ == "__main__":
    sys.exit(main())
