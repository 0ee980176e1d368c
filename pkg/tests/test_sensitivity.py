import math
from dataclasses import replace

import numpy as np
import pytest

from nvqoc.model import NvModel
from nvqoc.photophysics import DEFAULT_READOUT, readout_noise
from nvqoc.protocols import ramsey_fringe
from nvqoc.sensitivity import (
    FWHM_PER_SIGMA,
    GAUSSIAN_LINESHAPE,
    FitDivergedError,
    SensitivityParams,
    SensitivityReport,
    SensitivityRow,
    UnderResolvedError,
    decoherence_factor,
    eta_podmr,
    eta_podmr_value,
    eta_ramsey,
    eta_ramsey_value,
    eta_spin_projection,
    fit_gaussian_dip,
    fit_ramsey,
    gaussian_dip,
    gyromagnetic_ratio,
    kappa_exp,
    merge_frequency_priors,
    parse_report,
    ramsey_model,
    ramsey_priors,
)

# CODATA 2022 values typed in by hand, independent of the scipy lookup
HBAR = 1.054571817e-34
MU_B = 9.2740100657e-24
G_E = 2.00231930436092
GAMMA = G_E * MU_B / HBAR


def test_constants_and_gamma():
    assert gyromagnetic_ratio() == pytest.approx(GAMMA, rel=1e-9)
    # about 28.0 GHz/T in ordinary frequency
    assert gyromagnetic_ratio() / (2 * math.pi) == pytest.approx(28.0249514e9, rel=1e-7)
    assert GAUSSIAN_LINESHAPE == pytest.approx(0.70, abs=0.005)
    assert FWHM_PER_SIGMA == pytest.approx(2.3548200450309493)


def test_spin_projection_limit():
    one = eta_spin_projection(SensitivityParams(measurement_time=1.0))
    assert one == pytest.approx(HBAR / (G_E * MU_B), rel=1e-9)
    assert one == pytest.approx(5.69e-12, rel=2e-3)
    four = eta_spin_projection(SensitivityParams(measurement_time=4.0))
    assert four == pytest.approx(one / 2)
    assert eta_spin_projection(SensitivityParams(measurement_time=1.0, spin_factor=2)) == pytest.approx(one / 2)
    with pytest.raises(ValueError):
        eta_spin_projection(SensitivityParams(measurement_time=0.0))


def test_kappa_and_decoherence_factor():
    assert kappa_exp(1e-6, 0.0) == 1.0
    assert kappa_exp(1e-6, 1e-6) == pytest.approx(math.sqrt(3))
    assert kappa_exp(1e9, 1e-6) == pytest.approx(1.0, abs=1e-12)
    assert decoherence_factor(0.0, 1e-6) == 1.0
    for m in (1, 2, 3.5):
        assert decoherence_factor(1e-6, 1e-6, m) == pytest.approx(math.e)
    assert decoherence_factor(0.5e-6, 1e-6, 2) == pytest.approx(1.2840254166877414, rel=1e-12)
    assert decoherence_factor(1e-3, 1e-6, 2) == math.inf
    assert eta_ramsey_value(0.3, 1e-3, 1e-6, 1e-6) == math.inf


def test_eta_podmr_reference_value():
    sigma_f = 2 * math.pi * 1e6
    value = eta_podmr_value(sigma_f, 0.3, 0.05, 200e-9, 1.2e-6, GAMMA)
    # spreadsheet-style evaluation, one factor at a time
    p = math.sqrt(math.e / (8 * math.log(2)))
    a = p / GAMMA
    b = sigma_f / (0.3 * math.sqrt(0.05))
    c = math.sqrt(200e-9 + 1.2e-6)
    assert value == pytest.approx(a * b * c, rel=1e-12)
    assert value == pytest.approx(4.4066e-7, rel=1e-4)


def test_eta_podmr_proportionality():
    base = eta_podmr_value(1e7, 0.2, 0.05, 50e-9, 1e-6)
    assert eta_podmr_value(5e6, 0.2, 0.05, 50e-9, 1e-6) == pytest.approx(base / 2)
    assert eta_podmr_value(1e7, 0.4, 0.05, 50e-9, 1e-6) == pytest.approx(base / 2)
    for bad in (0.0, -0.1):
        with pytest.raises(ValueError):
            eta_podmr_value(1e7, bad, 0.05, 50e-9, 1e-6)
    with pytest.raises(ValueError):
        eta_podmr_value(1e7, 0.2, 0.0, 50e-9, 1e-6)


def test_eta_ramsey_formula_and_scaling():
    c, tau, t2, tm = 0.3, 0.5e-6, 1e-6, 1e-6
    expect = math.exp(0.25) * math.sqrt(tau + tm) / (c * GAMMA * tau)
    assert eta_ramsey_value(c, tau, t2, tm, 2, GAMMA) == pytest.approx(expect, rel=1e-12)
    assert eta_ramsey_value(2 * c, tau, t2, tm, 2, GAMMA) == pytest.approx(expect / 2)
    # experimental ballpark lands below 100 nT/sqrt(Hz)
    assert expect < 100e-9
    with pytest.raises(ValueError):
        eta_ramsey_value(0.0, tau, t2, tm)
    with pytest.raises(ValueError):
        eta_ramsey_value(c, 0.0, t2, tm)


def test_eta_ramsey_unimodal_in_tau():
    taus = np.linspace(0.01e-6, 4e-6, 2000)
    eta = np.array([eta_ramsey_value(0.3, t, 1e-6, 1e-6) for t in taus])
    k = int(np.argmin(eta))
    assert 0 < k < taus.size - 1
    assert np.all(np.diff(eta[: k + 1]) < 0)
    assert np.all(np.diff(eta[k:]) > 0)


def test_monotonicity_on_grids():
    cs = np.linspace(0.05, 0.5, 30)
    po = [eta_podmr_value(1e7, c, 0.05, 50e-9, 1e-6) for c in cs]
    ra = [eta_ramsey_value(c, 0.5e-6, 1e-6, 1e-6) for c in cs]
    assert np.all(np.diff(po) < 0) and np.all(np.diff(ra) < 0)
    widths = np.linspace(1e6, 1e8, 30)
    assert np.all(np.diff([eta_podmr_value(w, 0.2, 0.05, 50e-9, 1e-6) for w in widths]) > 0)
    t2s = np.linspace(0.5e-6, 5e-6, 30)
    assert np.all(np.diff([eta_ramsey_value(0.3, 0.5e-6, t, 1e-6) for t in t2s]) < 0)


def test_two_readout_fidelity_forms_agree(rng):
    from nvqoc.sensitivity import readout_fidelity_factor

    for _ in range(200):
        r1 = rng.uniform(1, 1e5)
        r0 = r1 * rng.uniform(1.01, 3)
        c = (r0 - r1) / (r0 + r1)
        r = (r0 + r1) / 2
        assert readout_fidelity_factor(c, r) == pytest.approx(readout_noise((r0, r1)).sigma_r, rel=1e-12)


# --- Gaussian dip fits -----------------------------------------------------------------


F = np.linspace(-6e6, 6e6, 41)


def test_dip_fit_noiseless_recovery():
    truth = (1.0, 0.12, 0.4e6, 1.1e6)
    fit = fit_gaussian_dip(F, gaussian_dip(F, *truth))
    for got, want in zip((fit.baseline, fit.contrast, fit.center, fit.width), truth):
        assert got == pytest.approx(want, rel=1e-6)
    assert fit.fwhm == pytest.approx(FWHM_PER_SIGMA * 1.1e6, rel=1e-6)
    assert fit.residual_norm < 1e-9


def test_dip_fit_poisson_calibration():
    truth = np.array([1.0, 0.1, -0.3e6, 1.5e6])
    shots, rate = 100_000, 0.05
    rng = np.random.default_rng(11)
    pulls = []
    for _ in range(40):
        mean = gaussian_dip(F, *truth)
        ref = rng.poisson(rate * shots, F.size)
        sig = rng.poisson(rate * shots * mean)
        y = sig / ref
        se = y * np.sqrt(1 / np.maximum(sig, 1) + 1 / ref)
        fit = fit_gaussian_dip(F, y, sigma=se)
        got = np.array([fit.baseline, fit.contrast, fit.center, fit.width])
        ses = np.array([fit.stderr[k] for k in ("baseline", "contrast", "center", "width")])
        pulls.append((got - truth) / ses)
        assert fit.optimality < 1e-5
    pulls = np.array(pulls)
    assert np.mean(np.abs(pulls) < 3) > 0.95
    # standard errors are calibrated: pull spread near one
    assert np.all(np.abs(pulls.std(axis=0) - 1) < 0.4)


def test_dip_fit_flat_data():
    rng = np.random.default_rng(2)
    y = 1 + 0.002 * rng.standard_normal(F.size)
    try:
        fit = fit_gaussian_dip(F, y, sigma=np.full(F.size, 0.002))
    except FitDivergedError:
        return
    assert abs(fit.contrast) < 3 * fit.stderr["contrast"] or abs(fit.contrast) < 0.01


def test_dip_fit_input_validation():
    with pytest.raises(ValueError):
        fit_gaussian_dip([0, 1, 2], [1, 1, 1])


# --- Ramsey fits -----------------------------------------------------------------------


TAUS = np.linspace(0, 3e-6, 121)


def test_ramsey_single_line_recovery():
    y = ramsey_model(TAUS, 1.0, 0.25, 1.3e-6, 2, [1.0], [3e6], [0.2])
    fit = fit_ramsey(TAUS, y, [3.05e6])
    assert fit.t2_star == pytest.approx(1.3e-6, rel=1e-6)
    assert fit.frequencies[0] == pytest.approx(3e6, rel=1e-6)
    assert fit.contrast == pytest.approx(0.25, rel=1e-6)
    assert fit.phases[0] == pytest.approx(0.2, abs=1e-6)
    assert fit.optimality < 1e-6


def test_ramsey_three_lines_with_shot_noise():
    nus = ramsey_priors(5e6)
    rng = np.random.default_rng(5)
    t2s = []
    for _ in range(10):
        mean = ramsey_model(TAUS, 1.0, 0.25, 1.5e-6, 2, [1 / 3] * 3, nus, [0, 0, 0])
        ref = rng.poisson(5000, TAUS.size)
        sig = rng.poisson(5000 * mean)
        fit = fit_ramsey(TAUS, sig / ref, nus + 0.05e6)
        t2s.append(fit.t2_star)
        assert np.sum(np.abs(fit.amplitudes)) == pytest.approx(1.0)
    assert np.all(np.abs(np.array(t2s) / 1.5e-6 - 1) < 0.1)


def test_ramsey_fit_decay_order():
    y = ramsey_model(TAUS, 1.0, 0.3, 1.0e-6, 1.0, [1.0], [2e6], [0.0])
    fit = fit_ramsey(TAUS, y, [2e6], decay_order=2.0, fit_decay_order=True)
    assert fit.decay_order == pytest.approx(1.0, rel=1e-5)
    assert fit.t2_star == pytest.approx(1.0e-6, rel=1e-5)


def test_ramsey_zero_contrast_signals_error():
    rng = np.random.default_rng(8)
    y = 1 + 1e-4 * rng.standard_normal(TAUS.size)
    fit = fit_ramsey(TAUS, y, [3e6], t2_guess=1e-6)
    assert fit.contrast < 5e-4
    with pytest.raises(ValueError):
        eta_ramsey(replace(fit, contrast=0.0), SensitivityParams())


def test_ramsey_underresolved_grid():
    taus = np.linspace(0, 3e-6, 21)
    with pytest.raises(UnderResolvedError):
        fit_ramsey(taus, np.ones_like(taus), [10e6])


def test_merge_frequency_priors():
    assert np.allclose(merge_frequency_priors([-2.16e6, 0.0, 2.16e6], 1e5), [0.0, 2.16e6])
    assert np.allclose(merge_frequency_priors([1e6, 1.01e6, 5e6], 1e5), [1e6, 5e6])


def test_on_resonance_fringe_fits_shorter_t2_than_detuned():
    model = NvModel()
    half = model.rectangular(np.pi / 2)
    t2 = {}
    for det_hz in (0.0, 10e6):
        fr = ramsey_fringe(half, TAUS, 2 * np.pi * det_hz, model, DEFAULT_READOUT, noiseless=True)
        t2[det_hz] = fit_ramsey(fr.taus, fr.n_ph, ramsey_priors(det_hz, np.asarray(model.hyperfine.offsets) / (2 * np.pi))).t2_star
    assert t2[0.0] < t2[10e6]


def test_eta_from_fits():
    params = SensitivityParams(measurement_time=1.2e-6, pi_time=200e-9, counts_per_shot=0.05)
    fit = fit_gaussian_dip(F, gaussian_dip(F, 1.0, 0.3, 0.0, 1e6 / FWHM_PER_SIGMA))
    assert eta_podmr(fit, params) == pytest.approx(4.4066e-7, rel=1e-4)
    rf = fit_ramsey(TAUS, ramsey_model(TAUS, 1.0, 0.3, 1e-6, 2, [1.0], [3e6], [0.0]), [3e6])
    assert eta_ramsey(rf, params) == pytest.approx(
        eta_ramsey_value(0.3, 0.5e-6, 1e-6, 1.2e-6, 2), rel=1e-5)


def test_report_round_trip(tmp_path):
    rows = [SensitivityRow(0.2, 0.1, 1e6, 3e-7, 0.01, 1e4), SensitivityRow(1.0, 0.2, 1.2e6, 2e-7)]
    rep = SensitivityReport("podmr-amplitude", "scale", "fwhm_hz", rows, SensitivityParams())
    path = tmp_path / "r.txt"
    rep.write(path)
    header, table = parse_report(path.read_text())
    assert header["sensitivity report"] == "podmr-amplitude"
    assert "t_m" in header["measurement time convention"]
    assert table.shape == (2, 6)
    assert table[0, 5] == pytest.approx(3e-7)
    assert np.isnan(table[1, 2])
