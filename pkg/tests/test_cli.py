"""End-to-end CLI flows, run in-process through main(argv).

Synthetic event streams cluster around a drifting center so the 8x8
downsampling produces non-zero count maps (uniform noise this sparse would
round every block mean to zero).
"""
import json

import numpy as np
import pytest

from janeeye.cli import SCHEMA_VERSION, main
from janeeye.events import read_frame_dump, write_events_binary, write_events_csv
from janeeye.model_io import load_model
from janeeye.network import DEFAULT_CONFIG, init_weights
from janeeye.validation import EVENT_DTYPE


def clustered_events(rng, n, duration_us, center=(320, 240), spread=18.0):
    arr = np.zeros(n, dtype=EVENT_DTYPE)
    arr["t"] = np.sort(rng.integers(1, duration_us, size=n))
    drift = arr["t"].astype(np.float64) / duration_us * 40.0
    arr["x"] = np.clip(rng.normal(center[0] + drift, spread, size=n), 0, 639).astype(np.uint16)
    arr["y"] = np.clip(rng.normal(center[1], spread, size=n), 0, 479).astype(np.uint16)
    arr["p"] = rng.choice([-1, 1], size=n)
    return arr


@pytest.fixture
def event_csv(tmp_path):
    rng = np.random.default_rng(70)
    path = tmp_path / "events.csv"
    write_events_csv(path, clustered_events(rng, 30_000, 30_000))
    return path


def run_ok(argv, tmp_path, capsys):
    """Run a subcommand, return its parsed JSON report."""
    report = tmp_path / "report.json"
    rc = main(argv + ["--report", str(report)])
    capsys.readouterr()
    assert rc == 0
    return json.loads(report.read_text())


def run_err(argv, capsys):
    rc = main(argv)
    out = capsys.readouterr().out
    assert rc == 1
    return json.loads(out)["error"]


def make_model(tmp_path, capsys, store_float=False, seed=0):
    path = tmp_path / "model.jem"
    argv = ["init-model", "--output", str(path), "--seed", str(seed)]
    if store_float:
        argv.append("--store-float")
    doc = run_ok(argv, tmp_path, capsys)
    return path, doc


def make_frames(tmp_path, capsys, event_csv):
    path = tmp_path / "frames.bin"
    doc = run_ok(["aggregate", "--input", str(event_csv), "--output", str(path)],
                 tmp_path, capsys)
    return path, doc


# --- aggregate ----------------------------------------------------------------


def test_aggregate_time_mode(tmp_path, capsys, event_csv):
    frames_path, doc = make_frames(tmp_path, capsys, event_csv)
    assert doc["schema_version"] == SCHEMA_VERSION
    assert doc["manifest"]["subcommand"] == "aggregate"
    assert doc["manifest"]["args"]["dt_us"] == 10_000
    res = doc["results"]
    assert res["events"] == 30_000
    assert res["frames"] == 3  # 30 ms of events in 10 ms windows
    assert res["frame_rate_hz"] == pytest.approx(100.0)
    assert res["frame_shape"] == [3, 60, 80]
    frames = read_frame_dump(frames_path)
    assert len(frames) == 3
    assert all(f.shape == (3, 60, 80) for f in frames)
    assert sum(int(np.abs(f).sum()) for f in frames) > 0


def test_aggregate_count_mode_binary_input(tmp_path, capsys):
    rng = np.random.default_rng(71)
    events_path = tmp_path / "events.bin"
    write_events_binary(events_path, clustered_events(rng, 10_500, 80_000))
    doc = run_ok(
        ["aggregate", "--input", str(events_path), "--mode", "count",
         "--count", "5000", "--no-downsample",
         "--output", str(tmp_path / "frames.bin")],
        tmp_path, capsys)
    res = doc["results"]
    assert res["frames"] == 2
    assert res["dropped_tail_events"] == 500
    assert res["frame_shape"] == [3, 480, 640]
    assert res["event_rate_hz"] > 0


def test_aggregate_custom_window(tmp_path, capsys, event_csv):
    doc = run_ok(
        ["aggregate", "--input", str(event_csv), "--dt-us", "5000", "--t0-us", "0",
         "--output", str(tmp_path / "frames.bin")],
        tmp_path, capsys)
    assert doc["results"]["frames"] == 6
    assert doc["results"]["frame_rate_hz"] == pytest.approx(200.0)


# --- init-model / quantize -----------------------------------------------------


def test_init_model_report(tmp_path, capsys):
    path, doc = make_model(tmp_path, capsys, store_float=True, seed=3)
    assert doc["results"]["params"] == 17_638
    assert doc["results"]["macs_per_frame"] == 5_050_464
    assert doc["results"]["stored_float_refs"] is True
    assert doc["counters"]["footprint_vs_float32"] == 0.25
    bundle = load_model(path)
    assert bundle.config == DEFAULT_CONFIG
    assert bundle.weights  # float refs embedded


def test_quantize_from_npz(tmp_path, capsys):
    weights = init_weights(seed=5)
    npz_path = tmp_path / "weights.npz"
    np.savez(npz_path, **weights)
    out = tmp_path / "quantized.jem"
    doc = run_ok(["quantize", "--input", str(npz_path), "--output", str(out)],
                 tmp_path, capsys)
    assert doc["counters"]["weight_bytes"] == 17_414
    assert load_model(out).qweights["conv1.weight"].dtype == np.int8


def test_quantize_from_model_refs(tmp_path, capsys):
    path, _ = make_model(tmp_path, capsys, store_float=True)
    out = tmp_path / "requantized.jem"
    doc = run_ok(["quantize", "--input", str(path), "--output", str(out)],
                 tmp_path, capsys)
    assert doc["counters"]["footprint_vs_float32"] == 0.25
    orig = load_model(path).qweights
    back = load_model(out).qweights
    assert all(np.array_equal(orig[k], back[k]) for k in orig)


def test_quantize_without_refs_fails(tmp_path, capsys):
    path, _ = make_model(tmp_path, capsys, store_float=False)
    err = run_err(["quantize", "--input", str(path),
                   "--output", str(tmp_path / "out.jem")], capsys)
    assert err["code"] == "missing_tensor"


# --- infer ----------------------------------------------------------------------


def test_infer_fixed_writes_coords_csv(tmp_path, capsys, event_csv):
    model, _ = make_model(tmp_path, capsys, seed=1)
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    coords_csv = tmp_path / "coords.csv"
    doc = run_ok(
        ["infer", "--model", str(model), "--frames", str(frames),
         "--output", str(coords_csv)],
        tmp_path, capsys)
    res = doc["results"]
    assert res["engine"] == "fixed"
    assert res["frames"] == 3
    assert res["coordinate_space"] == "frame"
    assert len(res["coords"]) == 3
    assert doc["counters"]["macs_per_frame"] == 5_050_464

    lines = coords_csv.read_text().strip().splitlines()
    assert lines[0] == "frame_idx,x,y"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert int(first[0]) == 0
    assert float(first[1]) == pytest.approx(res["coords"][0][0], abs=1e-5)


def test_infer_reference_sensor_coords(tmp_path, capsys, event_csv):
    model, _ = make_model(tmp_path, capsys, store_float=True, seed=2)
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    frame_doc = run_ok(
        ["infer", "--model", str(model), "--frames", str(frames),
         "--engine", "reference", "--activations", "hardware"],
        tmp_path, capsys)
    sensor_doc = run_ok(
        ["infer", "--model", str(model), "--frames", str(frames),
         "--engine", "reference", "--activations", "hardware", "--sensor-coords"],
        tmp_path, capsys)
    assert sensor_doc["results"]["coordinate_space"] == "sensor"
    frame_coords = np.array(frame_doc["results"]["coords"])
    assert np.any(frame_coords != 0.0)  # guard: scaling check must not be vacuous
    assert np.allclose(np.array(sensor_doc["results"]["coords"]), 8.0 * frame_coords)


def test_infer_reference_needs_float_refs(tmp_path, capsys, event_csv):
    model, _ = make_model(tmp_path, capsys, store_float=False)
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    err = run_err(["infer", "--model", str(model), "--frames", str(frames),
                   "--engine", "reference"], capsys)
    assert err["code"] == "missing_tensor"


# --- simulate / calibrate --------------------------------------------------------


def test_simulate_default_architecture(tmp_path, capsys):
    doc = run_ok(["simulate"], tmp_path, capsys)
    res = doc["results"]
    assert res["cycles"] == 28_988
    assert res["sparsity"] == 0.4
    assert res["sparsity_mode"] == "injected"
    assert res["energy_total_uj"] == pytest.approx(18.9, rel=1e-4)
    assert res["utilization_avg"] == pytest.approx(0.871671, abs=1e-6)
    assert "fsm_trace" not in res
    assert res["mac_counters"]["conserved"] is True


def test_simulate_trace_flag(tmp_path, capsys):
    doc = run_ok(["simulate", "--trace", "--sparsity", "0.0"], tmp_path, capsys)
    trace = doc["results"]["fsm_trace"]
    assert trace[0]["state"] == "IDLE"
    assert trace[-1]["state"] == "DONE"


def test_simulate_measured_datapath(tmp_path, capsys, event_csv):
    model, _ = make_model(tmp_path, capsys, seed=4)
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    doc = run_ok(["simulate", "--model", str(model), "--frames", str(frames)],
                 tmp_path, capsys)
    res = doc["results"]
    assert res["sparsity_mode"] == "measured"
    assert 0.0 < res["sparsity"] < 1.0
    assert res["datapath"]["matches"] is True
    assert res["datapath"]["layers_compared"] == 14


def test_simulate_frames_without_model(tmp_path, capsys, event_csv):
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    err = run_err(["simulate", "--frames", str(frames)], capsys)
    assert err["code"] == "invalid_input"


def test_calibrate_then_simulate_roundtrip(tmp_path, capsys):
    coeff_path = tmp_path / "coefficients.json"
    doc = run_ok(["calibrate", "--output", str(coeff_path)], tmp_path, capsys)
    stored = json.loads(coeff_path.read_text())
    assert stored["schema_version"] == 1
    assert stored["unit"] == "pJ"
    assert stored["coefficients"] == doc["results"]["coefficients"]

    sim = run_ok(["simulate", "--coefficients", str(coeff_path)], tmp_path, capsys)
    assert sim["results"]["energy_total_uj"] == pytest.approx(18.9, rel=1e-4)


def test_calibrate_custom_target(tmp_path, capsys):
    coeff_path = tmp_path / "coefficients.json"
    run_ok(["calibrate", "--energy-target-uj", "10.0", "--output", str(coeff_path)],
           tmp_path, capsys)
    sim = run_ok(["simulate", "--coefficients", str(coeff_path)], tmp_path, capsys)
    assert sim["results"]["energy_total_uj"] == pytest.approx(10.0, rel=1e-4)


# --- failure modes -----------------------------------------------------------------


def test_missing_input_file_is_io_error(tmp_path, capsys):
    err = run_err(["aggregate", "--input", str(tmp_path / "nope.csv"),
                   "--output", str(tmp_path / "out.bin")], capsys)
    assert err["code"] == "io"


def test_corrupt_model_reports_format_error(tmp_path, capsys, event_csv):
    model, _ = make_model(tmp_path, capsys)
    blob = bytearray(model.read_bytes())
    blob[-10] ^= 0xFF
    model.write_bytes(bytes(blob))
    frames, _ = make_frames(tmp_path, capsys, event_csv)
    err = run_err(["infer", "--model", str(model), "--frames", str(frames)], capsys)
    assert err["code"] == "model_checksum"


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    capsys.readouterr()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "janeeye" in capsys.readouterr().out
