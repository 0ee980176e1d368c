"""Magnetic-field sensitivity estimates and the fits that feed them.

All sensitivities are in T/sqrt(Hz).  Frequencies passed to the formulas are
angular (rad/s) so that dividing by the gyromagnetic ratio (rad/(s T)) gives
tesla; the fit objects report linewidths and precession frequencies in Hz and
convert when handed to the formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants
from scipy.optimize import least_squares

TWO_PI = 2.0 * np.pi

#: Magnitude of the free-electron g factor.
G_ELECTRON = abs(constants.physical_constants["electron g factor"][0])
BOHR_MAGNETON = constants.physical_constants["Bohr magneton"][0]
HBAR = constants.hbar

#: Lineshape factor of a Gaussian resonance, sqrt(e / (8 ln 2)).
GAUSSIAN_LINESHAPE = math.sqrt(math.e / (8.0 * math.log(2.0)))
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class FitDivergedError(RuntimeError):
    """A least-squares fit failed to converge or produced unusable parameters."""


class UnderResolvedError(ValueError):
    """The sampling grid cannot resolve the requested frequencies."""


def gyromagnetic_ratio(g_factor: float = G_ELECTRON) -> float:
    """``g mu_B / hbar`` in rad/(s T); about 2 pi x 28.0 GHz/T for the NV electron spin."""
    return g_factor * BOHR_MAGNETON / HBAR


def measurement_time(wait_time: float, init_time: float) -> float:
    """Shorthand ``t_m = t_w + 2 t_i`` used when overhead is folded into t_m."""
    return wait_time + 2.0 * init_time


@dataclass(frozen=True)
class SensitivityParams:
    """Inputs shared by the sensitivity formulas (SI units).

    ``measurement_time`` already includes overhead (``t_w + 2 t_i``) unless
    ``tm_convention`` says otherwise; the label is carried into reports.
    """

    measurement_time: float = 1e-6
    init_time: float = 0.0
    pi_time: float = 50e-9
    counts_per_shot: float = 0.05
    decay_order: float = 2.0
    spin_factor: float = 1.0
    g_factor: float = G_ELECTRON
    lineshape: float = GAUSSIAN_LINESHAPE
    tm_convention: str = "t_m = t_w + 2 t_i"

    def __post_init__(self):
        for name in ("measurement_time", "init_time", "pi_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.g_factor > 0 or not self.spin_factor > 0:
            raise ValueError("g_factor and spin_factor must be positive")

    @property
    def gamma(self) -> float:
        return gyromagnetic_ratio(self.g_factor)


def eta_spin_projection(params: SensitivityParams) -> float:
    """Spin-projection-limited sensitivity ``hbar / (S g mu_B) / sqrt(t_m)``."""
    if not params.measurement_time > 0:
        raise ValueError("measurement time must be positive")
    return HBAR / (params.spin_factor * params.g_factor * BOHR_MAGNETON) / math.sqrt(params.measurement_time)


def kappa_exp(t_m: float, t_i: float) -> float:
    """Overhead penalty ``sqrt((t_m + 2 t_i) / t_m)`` for equal init and readout times."""
    if not t_m > 0 or t_i < 0:
        raise ValueError("need t_m > 0 and t_i >= 0")
    return math.sqrt((t_m + 2.0 * t_i) / t_m)


def decoherence_factor(t_m: float, t2_star: float, m: float = 2.0) -> float:
    """Dephasing penalty ``exp((t_m / T2*)**m)``."""
    if t_m < 0 or not t2_star > 0:
        raise ValueError("need t_m >= 0 and T2* > 0")
    return _exp_or_inf((t_m / t2_star) ** m)


def _exp_or_inf(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def readout_fidelity_factor(contrast: float, counts_per_shot: float) -> float:
    """Photon-shot-noise factor ``sqrt(1 + 1/(C**2 R))`` of an averaged readout."""
    if contrast == 0 or not counts_per_shot > 0:
        raise ValueError("need non-zero contrast and positive count rate")
    return math.sqrt(1.0 + 1.0 / (contrast**2 * counts_per_shot))


def eta_podmr_value(fwhm: float, contrast: float, counts_per_shot: float, pi_time: float,
                    t_m: float, gamma: float | None = None, lineshape: float = GAUSSIAN_LINESHAPE) -> float:
    """Pulsed-ODMR sensitivity ``P / gamma * fwhm / (C sqrt(R)) * sqrt(T_pi + t_m)``.

    ``fwhm`` is the angular linewidth in rad/s.
    """
    if not contrast > 0:
        raise ValueError("contrast must be positive for a sensitivity estimate")
    if not counts_per_shot > 0:
        raise ValueError("count rate must be positive")
    gamma = gyromagnetic_ratio() if gamma is None else gamma
    return lineshape / gamma * fwhm / (contrast * math.sqrt(counts_per_shot)) * math.sqrt(pi_time + t_m)


def eta_ramsey_value(contrast: float, tau: float, t2_star: float, t_m: float, m: float = 2.0,
                     gamma: float | None = None) -> float:
    """Ramsey sensitivity ``exp((tau/T2*)**m) sqrt(tau + t_m) / (C gamma tau)``."""
    if not contrast > 0:
        raise ValueError("contrast must be positive for a sensitivity estimate")
    if not tau > 0:
        raise ValueError("free precession time must be positive")
    gamma = gyromagnetic_ratio() if gamma is None else gamma
    return _exp_or_inf((tau / t2_star) ** m) * math.sqrt(tau + t_m) / (contrast * gamma * tau)


def eta_podmr(fit: "GaussianDipFit", params: SensitivityParams) -> float:
    """Pulsed-ODMR sensitivity from a dip fit; ``R`` is the raw count rate from ``params``."""
    return eta_podmr_value(TWO_PI * fit.fwhm, fit.contrast, params.counts_per_shot, params.pi_time,
                           params.measurement_time, params.gamma, params.lineshape)


def eta_ramsey(fit: "RamseyFit", params: SensitivityParams, tau: float | None = None) -> float:
    """Ramsey sensitivity at ``tau`` (default ``0.5 T2*``) from a fringe fit."""
    tau = 0.5 * fit.t2_star if tau is None else tau
    return eta_ramsey_value(fit.contrast, tau, fit.t2_star, params.measurement_time,
                            fit.decay_order, params.gamma)


# --- fitting helpers -----------------------------------------------------------------------------


def _weights(y, sigma):
    if sigma is None:
        return np.ones_like(y), False
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise ValueError("uncertainties must be positive")
    return 1.0 / np.broadcast_to(s, y.shape), True


def _covariance(res, n_points, absolute):
    j = res.jac
    _, s, vt = np.linalg.svd(j, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.full((j.shape[1],) * 2, np.inf)
    keep = s > s[0] * max(j.shape) * np.finfo(float).eps
    cov = (vt[keep].T / s[keep] ** 2) @ vt[keep]
    if not keep.all():
        cov[:] = np.inf
    if not absolute:
        dof = n_points - j.shape[1]
        cov = cov * (2 * res.cost / dof if dof > 0 else np.inf)
    return cov


def _optimality(res, data) -> float:
    """Largest component of ``J^T r`` relative to ``|J| |r|``; near zero at a stationary point.

    An exact fit (residual below 1e-12 of the weighted data) reports zero,
    since the angle between gradient and residual is then meaningless.
    """
    r = np.linalg.norm(res.fun)
    if r <= 1e-12 * np.linalg.norm(data):
        return 0.0
    g = res.jac.T @ res.fun
    scale = np.linalg.norm(res.jac, axis=0) * r
    return float(np.max(np.abs(g) / np.where(scale > 0, scale, 1.0)))


# --- Gaussian dip --------------------------------------------------------------------------------


def gaussian_dip(f, baseline, contrast, center, width):
    f = np.asarray(f, dtype=float)
    return baseline * (1.0 - contrast * np.exp(-0.5 * ((f - center) / width) ** 2))


@dataclass
class GaussianDipFit:
    """Fitted dip; ``center``, ``width`` and ``fwhm`` are in the units of the input axis (Hz)."""

    baseline: float
    contrast: float
    center: float
    width: float
    covariance: np.ndarray
    residual_norm: float
    optimality: float
    stderr: dict = field(default_factory=dict)

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.width

    @property
    def fwhm_se(self) -> float:
        return FWHM_PER_SIGMA * self.stderr.get("width", np.nan)

    def model(self, f):
        return gaussian_dip(f, self.baseline, self.contrast, self.center, self.width)


def fit_gaussian_dip(freqs, n_ph, sigma=None) -> GaussianDipFit:
    """Weighted least-squares fit of ``R [1 - C exp(-((f - f0)/df)**2 / 2)]``.

    Starts from several centre/width guesses on a coarse grid and keeps the
    lowest cost.  ``sigma`` gives per-point uncertainties; without it the
    covariance is scaled by the reduced chi-square.

    Raises
    ------
    FitDivergedError
        If no start converges to finite parameters.
    """
    f = np.asarray(freqs, dtype=float)
    y = np.asarray(n_ph, dtype=float)
    if f.shape != y.shape or f.size < 5:
        raise ValueError("need at least 5 points with matching frequency axis")
    w, absolute = _weights(y, sigma)
    order = np.argsort(f)
    span = f[order[-1]] - f[order[0]]
    step = np.min(np.diff(f[order])) if f.size > 1 else span
    edge = np.concatenate([y[order[:2]], y[order[-2:]]])
    base0 = float(np.median(edge))
    k = int(np.argmin(y))
    depth = max(1.0 - y[k] / base0, 1e-3)

    def resid(p):
        return (gaussian_dip(f, *p) - y) * w

    best = None
    centers = f[order][max(0, np.searchsorted(f[order], f[k]) - 2):np.searchsorted(f[order], f[k]) + 3]
    for c0 in centers:
        for width0 in (span / 20, span / 8, span / 3):
            p0 = np.array([base0, depth, c0, max(width0, step)])
            try:
                res = least_squares(resid, p0, method="lm", x_scale="jac", ftol=1e-12, xtol=1e-12, gtol=1e-12)
            except (ValueError, np.linalg.LinAlgError):
                continue
            if res.success and np.all(np.isfinite(res.x)) and (best is None or res.cost < best.cost):
                best = res
    if best is None:
        raise FitDivergedError("Gaussian dip fit did not converge from any start")
    base, con, cen, wid = best.x
    wid = abs(wid)
    cov = _covariance(best, f.size, absolute)
    se = np.sqrt(np.abs(np.diag(cov)))
    names = ("baseline", "contrast", "center", "width")
    return GaussianDipFit(float(base), float(con), float(cen), float(wid), cov,
                          float(np.linalg.norm(best.fun)), _optimality(best, y * w),
                          dict(zip(names, map(float, se))))


# --- Ramsey fringe -------------------------------------------------------------------------------


@dataclass
class RamseyFit:
    """Fitted free-induction decay.

    ``amplitudes`` sum to one in absolute value (the overall size is in
    ``contrast``); ``frequencies`` are in Hz and ``phases`` in rad.
    """

    baseline: float
    contrast: float
    t2_star: float
    decay_order: float
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    optimality: float
    stderr: dict = field(default_factory=dict)

    def model(self, tau):
        return ramsey_model(tau, self.baseline, self.contrast, self.t2_star, self.decay_order,
                            self.amplitudes, self.frequencies, self.phases)


def ramsey_model(tau, baseline, contrast, t2_star, m, amplitudes, frequencies, phases):
    tau = np.asarray(tau, dtype=float)
    osc = sum(a * np.cos(TWO_PI * nu * tau + ph) for a, nu, ph in zip(amplitudes, frequencies, phases))
    return baseline * (1.0 + contrast * np.exp(-((tau / t2_star) ** m)) * osc)


def merge_frequency_priors(priors, tol: float) -> np.ndarray:
    """Distinct ``|nu|`` values; lines closer than ``tol`` cannot be told apart in a fringe."""
    out = []
    for nu in sorted(abs(float(x)) for x in priors):
        if not out or nu - out[-1] > tol:
            out.append(nu)
    return np.array(out)


def ramsey_priors(detuning_hz: float, offsets_hz=(-2.16e6, 0.0, 2.16e6)) -> np.ndarray:
    """Precession frequencies of each hyperfine line for a drive detuned by ``detuning_hz``."""
    return np.array([detuning_hz + o for o in offsets_hz])


def fit_ramsey(taus, n_ph, frequency_priors, sigma=None, t2_guess: float | None = None,
               decay_order: float = 2.0, fit_decay_order: bool = False) -> RamseyFit:
    """Least-squares fit of ``R [1 + C exp(-(tau/T2*)**m) sum_i A_i cos(2 pi nu_i tau + phi_i)]``.

    ``frequency_priors`` (Hz) seed the line frequencies; lines with equal
    ``|nu|`` are merged and lines too slow to complete a tenth of a period
    over the record are treated as static.  Each oscillation is fitted as
    ``a cos + b sin`` so that a linear solve over a grid of T2* values gives
    the starting point.

    Raises
    ------
    UnderResolvedError
        If the sampling step exceeds half the period of the fastest line.
    FitDivergedError
        If the nonlinear refinement fails.
    """
    t = np.asarray(taus, dtype=float)
    y = np.asarray(n_ph, dtype=float)
    if t.shape != y.shape or t.size < 5:
        raise ValueError("need at least 5 points with matching time axis")
    order = np.argsort(t)
    t, y = t[order], y[order]
    w, absolute = _weights(y, None if sigma is None else np.broadcast_to(np.asarray(sigma, float), y.shape)[order])
    t_max = t[-1]
    nus = merge_frequency_priors(frequency_priors, tol=0.5 / max(t_max, 1e-300))
    dt = np.max(np.diff(t))
    if nus.size and dt > 0.5 / nus.max():
        raise UnderResolvedError(f"sampling step {dt:.3g} s cannot resolve {nus.max():.3g} Hz")
    moving = nus * t_max >= 0.1
    n_static = int(np.count_nonzero(~moving))
    nus_moving = nus[moving]
    n_mov = nus_moving.size
    if n_static:
        n_static = 1  # static lines are indistinguishable from each other

    def design(t2, m, freq):
        env = np.exp(-((t / t2) ** m))
        cols = [np.ones_like(t)]
        if n_static:
            cols.append(env)
        for nu in freq:
            cols.append(env * np.cos(TWO_PI * nu * t))
            cols.append(env * np.sin(TWO_PI * nu * t))
        return np.stack(cols, axis=1)

    t2_grid = np.geomspace(t_max / 20, 5 * t_max, 25) if t2_guess is None else np.array([t2_guess])
    best = None
    for t2 in t2_grid:
        a = design(t2, decay_order, nus_moving)
        coef, *_ = np.linalg.lstsq(a * w[:, None], y * w, rcond=None)
        cost = np.sum(((a @ coef - y) * w) ** 2)
        if best is None or cost < best[0]:
            best = (cost, t2, coef)
    _, t2_0, coef = best
    base0 = coef[0]
    lin0 = coef[1:] / base0  # contrast-scaled oscillator coefficients

    # parameter vector: base, log T2, [log m], static amp, (nu, a, b) per moving line
    def unpack(p):
        i = 0
        base = p[i]; i += 1
        t2 = np.exp(p[i]); i += 1
        m = decay_order
        if fit_decay_order:
            m = np.exp(p[i]); i += 1
        stat = p[i:i + n_static]; i += n_static
        rest = p[i:].reshape(n_mov, 3)
        return base, t2, m, stat, rest

    def model(p):
        base, t2, m, stat, rest = unpack(p)
        env = np.exp(-((t / t2) ** m))
        osc = np.zeros_like(t)
        if n_static:
            osc += stat[0]
        for nu, ca, cb in rest:
            ph = TWO_PI * nu * t
            osc += ca * np.cos(ph) + cb * np.sin(ph)
        return base * (1.0 + env * osc)

    p0 = [base0, np.log(t2_0)]
    if fit_decay_order:
        p0.append(np.log(decay_order))
    p0.extend(lin0[:n_static])
    for k, nu in enumerate(nus_moving):
        p0.extend([nu, lin0[n_static + 2 * k], lin0[n_static + 2 * k + 1]])
    p0 = np.asarray(p0, dtype=float)
    try:
        res = least_squares(lambda p: (model(p) - y) * w, p0, method="lm", x_scale="jac",
                            ftol=1e-12, xtol=1e-12, gtol=1e-12)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FitDivergedError(f"Ramsey fit failed: {exc}") from exc
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitDivergedError(f"Ramsey fit did not converge: {res.message}")

    base, t2, m, stat, rest = unpack(res.x)
    amps, freqs, phases = [], [], []
    if n_static:
        amps.append(stat[0]); freqs.append(0.0); phases.append(0.0)
    for nu, ca, cb in rest:
        # ca cos + cb sin = r cos(x + phi) with r = hypot, phi = atan2(-cb, ca)
        amps.append(np.hypot(ca, cb)); freqs.append(nu); phases.append(np.arctan2(-cb, ca))
        if nu < 0:
            freqs[-1] = -nu
            phases[-1] = -phases[-1]
    amps = np.array(amps, dtype=float)
    phases = np.array(phases, dtype=float)
    if n_static and amps[0] < 0:
        amps[0] = -amps[0]
        phases[0] = np.pi
    contrast = float(np.sum(np.abs(amps)))
    rel = amps / contrast if contrast > 0 else np.zeros_like(amps)

    cov = _covariance(res, t.size, absolute)
    se = {"baseline": float(np.sqrt(abs(cov[0, 0]))),
          "t2_star": float(t2 * np.sqrt(abs(cov[1, 1])))}
    # delta method for the contrast, the sum of oscillator magnitudes
    grad = np.zeros(res.x.size)
    off = 2 + int(fit_decay_order)
    if n_static:
        grad[off] = np.sign(stat[0])
    for k, (_, ca, cb) in enumerate(rest):
        r = np.hypot(ca, cb)
        if r > 0:
            j = off + n_static + 3 * k
            grad[j + 1], grad[j + 2] = ca / r, cb / r
    se["contrast"] = float(np.sqrt(abs(grad @ cov @ grad)))
    if fit_decay_order:
        se["decay_order"] = float(m * np.sqrt(abs(cov[2, 2])))
    nu_idx = off + n_static + 3 * np.arange(n_mov)
    se["frequencies"] = [0.0] * n_static + [float(np.sqrt(abs(cov[i, i]))) for i in nu_idx]
    return RamseyFit(float(base), contrast, float(t2), float(m), rel, np.array(freqs, dtype=float), phases,
                     cov, float(np.linalg.norm(res.fun)), _optimality(res, y * w), se)


# --- reports -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class SensitivityRow:
    """One scan point: amplitude scale or detuning, contrast, linewidth or T2*, and eta."""

    point: float
    contrast: float
    width: float
    eta: float
    contrast_se: float = float("nan")
    width_se: float = float("nan")


@dataclass
class SensitivityReport:
    kind: str
    point_label: str
    width_label: str
    rows: list
    params: SensitivityParams

    def to_text(self) -> str:
        head = [
            f"# sensitivity report: {self.kind}",
            f"# measurement time convention: {self.params.tm_convention}",
            f"# t_m_s: {self.params.measurement_time:.9g}",
            f"# counts_per_shot: {self.params.counts_per_shot:.9g}",
            f"# columns: {self.point_label} contrast contrast_se {self.width_label} width_se eta_T_per_rtHz",
        ]
        body = [f"{r.point:.9g} {r.contrast:.9g} {r.contrast_se:.9g} {r.width:.9g} {r.width_se:.9g} {r.eta:.9g}"
                for r in self.rows]
        return "\n".join(head + body) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_report(text: str) -> tuple[dict, np.ndarray]:
    """Header fields and the numeric table of a report written by :meth:`SensitivityReport.to_text`."""
    header, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    return header, np.array(rows, dtype=float).reshape(-1, 6)
