import numpy as np
import pytest

from janeeye import activations as acts

ALL_RAWS = np.arange(-32768, 32768, dtype=np.int64)


def test_hard_sigmoid_equals_clipped_shift_form():
    # branch form must equal clip((x>>3)+1024, 0, 2048) for every raw
    got = acts.hard_sigmoid_raw(ALL_RAWS)
    want = np.clip((ALL_RAWS >> 3) + 1024, 0, 2048)
    assert np.array_equal(got, want)


def test_hard_tanh_equals_clipped_shift_form():
    got = acts.hard_tanh_raw(ALL_RAWS)
    want = np.clip(ALL_RAWS >> 1, -2048, 2048)
    assert np.array_equal(got, want)


def test_hard_sigmoid_key_points():
    # breakpoints at +-4.0 (raw +-8192), midpoint 0.5, slope 1/8
    assert acts.hard_sigmoid_raw(0) == 1024
    assert acts.hard_sigmoid_raw(8192) == 2048
    assert acts.hard_sigmoid_raw(-8192) == 0
    assert acts.hard_sigmoid_raw(8193) == 2048
    assert acts.hard_sigmoid_raw(-8193) == 0
    assert acts.hard_sigmoid_raw(2048) == 1024 + 256  # 1.0 -> 0.625


def test_hard_tanh_key_points():
    assert acts.hard_tanh_raw(0) == 0
    assert acts.hard_tanh_raw(4096) == 2048
    assert acts.hard_tanh_raw(-4096) == -2048
    assert acts.hard_tanh_raw(4097) == 2048
    assert acts.hard_tanh_raw(-4097) == -2048
    assert acts.hard_tanh_raw(2048) == 1024


def test_gates_monotone_and_bounded():
    for fn, lo, hi in ((acts.hard_sigmoid_raw, 0, 2048),
                       (acts.hard_tanh_raw, -2048, 2048)):
        out = fn(ALL_RAWS)
        assert out.min() == lo and out.max() == hi
        assert np.all(np.diff(out) >= 0)


def test_hard_tanh_symmetry_on_even_raws():
    # arithmetic shift is floor, so exact odd symmetry holds on even raws;
    # odd raws may differ by one ulp
    evens = np.arange(-4096, 4097, 2)
    assert np.array_equal(acts.hard_tanh_raw(-evens), -acts.hard_tanh_raw(evens))
    odds = np.arange(-4095, 4096, 2)
    diff = acts.hard_tanh_raw(-odds) + acts.hard_tanh_raw(odds)
    # floor(r/2) + floor(-r/2) == -1 for odd r
    assert set(np.unique(diff).tolist()) <= {-1, 0}


def test_relu_and_bypass():
    x = np.array([-5, 0, 7])
    assert acts.relu_raw(x).tolist() == [0, 0, 7]
    assert acts.bypass_raw(x).tolist() == [-5, 0, 7]
    assert acts.relu_raw(-3) == 0


def test_apply_fixed_dispatch():
    assert acts.apply_fixed("hard_sigmoid", 0) == 1024
    with pytest.raises(ValueError):
        acts.apply_fixed("swish", 0)


def test_reference_values():
    assert acts.sigmoid(0.0) == 0.5
    assert acts.tanh(0.0) == 0.0
    assert acts.gelu(0.0) == 0.0
    assert acts.hard_sigmoid(np.array([-100.0, 0.0, 100.0])).tolist() == [0.0, 0.5, 1.0]
    assert acts.hard_tanh(np.array([-100.0, 0.0, 100.0])).tolist() == [-1.0, 0.0, 1.0]
    # gelu(x) ~ x for large positive, ~0 for large negative
    assert abs(acts.gelu(10.0) - 10.0) < 1e-6
    assert abs(acts.gelu(-10.0)) < 1e-6


def test_sigmoid_numerically_stable():
    big = np.array([-800.0, 800.0])
    out = acts.sigmoid(big)
    assert np.all(np.isfinite(out))
    assert out.tolist() == [0.0, 1.0]


def test_reference_odd_symmetry():
    x = np.linspace(-8, 8, 1001)
    assert np.allclose(acts.tanh(-x), -acts.tanh(x))
    assert np.allclose(acts.hard_tanh(-x), -acts.hard_tanh(x))
    assert np.allclose(acts.sigmoid(-x), 1.0 - acts.sigmoid(x))


def test_apply_reference_dispatch():
    assert acts.apply_reference("sigmoid", 0.0) == 0.5
    with pytest.raises(ValueError):
        acts.apply_reference("nope", 0.0)


def test_approximation_error_report():
    rep = acts.approximation_error("hard_sigmoid", "sigmoid")
    assert rep["max_abs_error"] < 0.15
    assert rep["mean_abs_error"] < rep["max_abs_error"]
    rep = acts.approximation_error("hard_tanh", "tanh")
    # analytic max gap of clip(x/2) vs tanh is ~0.2664 at x = arccosh(sqrt(2))
    assert rep["max_abs_error"] == pytest.approx(0.26642, abs=5e-4)


def test_fixed_vs_reference_error_within_one_ulp_of_formula():
    # the fixed gates differ from the real piecewise formulas only through
    # the floor shift: at most one output ulp, everywhere
    for name in ("hard_sigmoid", "hard_tanh"):
        rep = acts.fixed_vs_reference_error(name, name)
        assert rep["max_abs_error"] <= 1.0 / 2048 + 1e-12
        assert rep["mean_abs_error"] <= rep["max_abs_error"]
