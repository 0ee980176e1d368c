import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nvqoc.pulses import (
    BasisElement,
    BasisKind,
    PulseExpansion,
    RestrictionMode,
    RestrictionPolicy,
    apply_restriction,
    basis_functions,
    default_bounds,
    default_sigma,
    evaluate_expansion,
    flat_top_window,
    format_pulse,
    parse_pulse,
    read_pulse,
    sample_basis,
    write_pulse,
)
from nvqoc.spin import TWO_PI, ControlPulse

W = TWO_PI * 10e6
DT = 0.05 / W
TP = 400e-9


def guess(n=None):
    n = n or int(round(TP / DT))
    return ControlPulse(np.tile([0.3 * W, 0.1 * W], (n, 1)), TP / n)


def test_fourier_sampling_is_deterministic_and_in_bounds():
    b = default_bounds("fourier", TP)
    a = sample_basis("fourier", 3, b, 42)
    assert a == sample_basis("fourier", 3, b, 42)
    assert len(a) == 6
    assert all(0 <= el.superparameter <= b[1] for el in a)
    assert [el.sub_index for el in a] == [1, 2] * 3


def test_sigmoid_prepends_anchor():
    sigma = default_sigma(TP)
    for n in (0, 1, 5):
        els = sample_basis("sigmoid", n, default_bounds("sigmoid", TP), 3, sigma=sigma)
        assert els[0].superparameter == 4.0 * sigma
        assert len(els) == n + 1
        assert all(4 * sigma <= e.superparameter <= TP - 4 * sigma for e in els)


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        sample_basis("fourier", 3, (1e6, 1e6), 0)
    with pytest.raises(ValueError):
        sample_basis("sigmoid", 3, (0.0, TP), 0)  # needs sigma


def test_zero_coefficients_reproduce_guess():
    u0 = guess()
    exp = PulseExpansion(u0, sample_basis("fourier", 4, default_bounds("fourier", TP), 1))
    out = evaluate_expansion(exp, np.zeros(exp.n_coefficients))
    assert np.array_equal(out.samples, u0.samples)


def test_single_fourier_element_matches_trig_table():
    u0 = ControlPulse(np.zeros((500, 2)), TP / 500)
    w = 2 * np.pi * 7.3e6
    for sub, fn in ((1, np.sin), (2, np.cos)):
        exp = PulseExpansion(u0, [BasisElement(BasisKind.FOURIER, w, sub)])
        out = exp.evaluate([[1.0], [0.0]])
        assert np.allclose(out.u1 - u0.u1, fn(w * u0.times), atol=1e-12, rtol=0)
        assert np.array_equal(out.u2, u0.u2)


def test_sigmoid_matches_gaussian_integral():
    sigma = default_sigma(TP)
    el = BasisElement(BasisKind.SIGMOID, 0.37 * TP, 1, sigma)
    t = np.linspace(0, TP, 9)
    col = basis_functions([el], t, TP)[:, 0]
    close = TP - 4 * sigma

    def integral(offset, x):
        g = lambda s: np.exp(-0.5 * ((s - offset) / sigma) ** 2) / (np.sqrt(2 * np.pi) * sigma)
        return quad(g, 0, x, epsabs=1e-14)[0]

    oracle = [integral(el.superparameter, x) - integral(close, x) for x in t]
    assert np.allclose(col, oracle, atol=1e-10)


def test_sigmoid_pair_returns_to_guess_at_ends():
    sigma = default_sigma(TP)
    n = 500
    u0 = ControlPulse(np.zeros((n, 2)), TP / n)
    exp = PulseExpansion(u0, sample_basis("sigmoid", 0, default_bounds("sigmoid", TP), 0, sigma=sigma))
    a1 = 0.8 * W
    cols = basis_functions(exp.elements, np.array([0.0, TP]), TP)
    assert np.all(np.abs(a1 * cols) <= 1e-6 * a1)
    # the plateau in between carries the full amplitude
    out = exp.evaluate([[a1], [0.0]])
    assert out.u1[n // 2] == pytest.approx(a1, rel=1e-4)  # erf tail at eps = 4


def test_coefficient_count_mismatch():
    exp = PulseExpansion(guess(), sample_basis("fourier", 2, default_bounds("fourier", TP), 0))
    with pytest.raises(ValueError):
        exp.evaluate(np.zeros(3))


# --- restriction ----------------------------------------------------------------


def test_cutoff_identity_inside_limits():
    p = guess()
    out = apply_restriction(RestrictionPolicy("cutoff", W), p)
    assert np.array_equal(out.samples, p.samples)


def test_cutoff_clamps_constant():
    p = ControlPulse(np.tile([2 * W, 0.0], (20, 1)), DT)
    out = apply_restriction(RestrictionPolicy("cutoff", W), p)
    assert np.allclose(out.u1, W) and np.allclose(out.u2, 0.0)


def test_bandwidth_affine_map_of_ramp():
    n = 101
    ramp = np.linspace(-2 * W, 2 * W, n)
    p = ControlPulse(np.column_stack([ramp, np.zeros(n)]), DT)
    pol = RestrictionPolicy("bandwidth", W)
    out = apply_restriction(pol, p)
    window = flat_top_window(n)
    # hand-computed map: [-2A, 2A] -> [-A, A] is a halving
    assert np.allclose(out.u1, 0.5 * ramp * window, atol=1e-6)
    assert out.u1[0] == 0.0 and out.u1[-1] == 0.0


def test_bandwidth_identity_before_window_inside_limits():
    p = guess()
    out = apply_restriction(RestrictionPolicy("bandwidth", W), p)
    assert np.allclose(out.samples, p.samples * flat_top_window(p.n_samples)[:, None])


def test_window_shape():
    w = flat_top_window(1000)
    assert w[0] == 0 and w[-1] == 0
    assert np.all(w[200:800] == 1.0)
    assert np.all(np.diff(w[:100]) >= 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**31), st.sampled_from(["cutoff", "bandwidth"]),
       st.floats(0.1, 5.0))
def test_restriction_respects_limits(n, seed, mode, spread):
    rng = np.random.default_rng(seed)
    raw = ControlPulse(rng.normal(scale=spread * W, size=(n, 2)), DT)
    pol = RestrictionPolicy(mode, W)
    out = apply_restriction(pol, raw)
    assert np.all(np.abs(out.samples) <= W * (1 + 1e-12))
    assert np.all(out.amplitude <= W * (1 + 1e-12))
    if mode == "bandwidth":
        assert np.all(out.samples[[0, -1]] == 0.0)
    # applying twice changes nothing for the clip
    if mode == "cutoff":
        again = apply_restriction(pol, out)
        assert np.allclose(again.samples, out.samples)


def test_policy_validation():
    with pytest.raises(ValueError):
        RestrictionPolicy("cutoff", 0.0)
    with pytest.raises(ValueError):
        RestrictionPolicy("sideways", W)
    assert RestrictionPolicy("bandwidth", W).mode is RestrictionMode.BANDWIDTH_LIMITED


# --- files ----------------------------------------------------------------------


def test_pulse_file_round_trip(tmp_path, rng):
    p = ControlPulse(rng.uniform(-0.7, 0.7, size=(64, 2)) * W, DT, rabi_max=W)
    path = tmp_path / "p.txt"
    write_pulse(path, p, W)
    q = read_pulse(path)
    assert q.dt == pytest.approx(p.dt, rel=1e-9)
    assert np.allclose(q.samples, p.samples, rtol=1e-8, atol=1e-9 * W)
    text = format_pulse(p, W)
    row = text.splitlines()[5].split()
    assert len(row) == 3 and float(row[0]) == pytest.approx(DT * 1e9, rel=1e-8)


def test_pulse_file_rejects_foreign_text():
    with pytest.raises(ValueError):
        parse_pulse("0 0 0\n")
