"""Laser-driven NV population dynamics and photon-counting readout.

Five-level incoherent model over ``(g0, g1, e0, e1, m)``: optical pumping
``g -> e`` (spin conserving), radiative decay ``e -> g`` (spin conserving),
inter-system crossing ``e -> m`` (faster from ``e1``) and metastable decay
``m -> g0, g1``.  The m_s = +1 and -1 sublevels are lumped into ``g1``/``e1``.

The readout follows the two-shot scheme: an alternating sequence of
"Readout 0" (no microwave) and "Readout 1" (spin-inversion pulse) shots, each
laser pulse split into a readout window ``[0, W_ro]`` and a saturation window
``[W_ro, L_d]``.  Each laser pulse also initializes the next shot, so the
populations entering a shot are taken from the periodic steady state of the
alternating cycle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

G0, G1, E0, E1, M = range(5)
LEVELS = ("g0", "g1", "e0", "e1", "m")

#: Bounds on (laser power mW, laser duration ns, wait time ns); the readout
#: window is bounded by ``[0.25, 0.75] * laser_duration``.
POWER_BOUNDS_MW = (2.0, 40.0)
DURATION_BOUNDS_NS = (300.0, 2000.0)
WINDOW_FRACTION_BOUNDS = (0.25, 0.75)
WAIT_BOUNDS_NS = (0.0, 1000.0)


@dataclass(frozen=True)
class NvRates:
    """Transition rates (1/s) and detection parameters.

    The pump rate follows the saturation law ``pump_max * P / (P + P_sat)``
    with ``P`` the laser source power in mW.
    """

    radiative: float = 1 / 12e-9
    isc_ms1: float = 1 / 15e-9
    isc_ms0: float = 1 / 300e-9
    meta_to_ms0: float = (2 / 3) / 300e-9
    meta_to_ms1: float = (1 / 3) / 300e-9
    pump_max: float = 1 / 8e-9
    pump_saturation_mw: float = 15.0
    collection_efficiency: float = 0.01
    background_cps: float = 2.0e3
    background_cps_per_mw: float = 5.0e2

    def __post_init__(self):
        for name in ("radiative", "isc_ms1", "isc_ms0", "meta_to_ms0", "meta_to_ms1",
                     "pump_max", "pump_saturation_mw", "collection_efficiency",
                     "background_cps", "background_cps_per_mw"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @property
    def metastable_lifetime(self) -> float:
        total = self.meta_to_ms0 + self.meta_to_ms1
        return np.inf if total == 0 else 1.0 / total

    def pump_rate(self, power_mw: float) -> float:
        if power_mw <= 0:
            return 0.0
        return self.pump_max * power_mw / (power_mw + self.pump_saturation_mw)

    def background_rate(self, power_mw: float) -> float:
        return self.background_cps + self.background_cps_per_mw * max(power_mw, 0.0)

    def rate_matrix(self, pump: float = 0.0) -> np.ndarray:
        """Generator ``Q`` of ``dp/dt = Q p``; columns sum to zero."""
        q = np.zeros((5, 5))

        def link(src, dst, k):
            q[dst, src] += k
            q[src, src] -= k

        link(G0, E0, pump)
        link(G1, E1, pump)
        link(E0, G0, self.radiative)
        link(E1, G1, self.radiative)
        link(E0, M, self.isc_ms0)
        link(E1, M, self.isc_ms1)
        link(M, G0, self.meta_to_ms0)
        link(M, G1, self.meta_to_ms1)
        return q

    # duck-typed readout source, see simulate_readout
    def expected_counts(self, params: "ReadoutParams", transfer: float = 1.0,
                        reference_transfer: float = 0.0) -> np.ndarray:
        """Expected counts per shot ``(r_a, s_a, r_b, s_b)``, background included.

        Shot ``a`` is preceded by a microwave transfer ``reference_transfer``
        (0 for a plain m_s = 0 readout), shot ``b`` by ``transfer``.
        """
        return _rate_model_counts(self, params, float(transfer), float(reference_transfer))


@dataclass(frozen=True)
class ReadoutParams:
    """Laser power (mW), laser duration, readout window and wait time (ns)."""

    laser_power: float
    laser_duration: float
    readout_window: float
    wait_time: float

    def violations(self) -> list[str]:
        out = []
        if not POWER_BOUNDS_MW[0] <= self.laser_power <= POWER_BOUNDS_MW[1]:
            out.append("laser_power")
        if not DURATION_BOUNDS_NS[0] <= self.laser_duration <= DURATION_BOUNDS_NS[1]:
            out.append("laser_duration")
        lo, hi = WINDOW_FRACTION_BOUNDS
        ld = self.laser_duration
        if not lo * ld * (1 - 1e-12) <= self.readout_window <= hi * ld * (1 + 1e-12):
            out.append("readout_window")
        if not WAIT_BOUNDS_NS[0] <= self.wait_time <= WAIT_BOUNDS_NS[1]:
            out.append("wait_time")
        return out

    def check(self) -> "ReadoutParams":
        bad = self.violations()
        if bad:
            raise ValueError(f"readout parameters out of bounds: {', '.join(bad)}")
        return self

    def as_dict(self) -> dict:
        return {
            "laser_power": self.laser_power,
            "laser_duration": self.laser_duration,
            "readout_window": self.readout_window,
            "wait_time": self.wait_time,
        }

    def as_vector(self) -> np.ndarray:
        return np.array([self.laser_power, self.laser_duration, self.readout_window, self.wait_time])


#: Standard starting point for step 1 (power set to the saturation power).
DEFAULT_READOUT = ReadoutParams(15.0, 1000.0, 450.0, 300.0)


@dataclass(eq=False)
class ReadoutCounts:
    """Photon counts per repetition block for the two-shot readout.

    Each of ``r0, r1, s0, s1`` holds one entry per block; a block sums
    ``shots_per_block`` laser shots.  In noiseless mode the entries are the
    expectation values and may be fractional.
    """

    r0: np.ndarray
    r1: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    shots_per_block: int = 1

    def __post_init__(self):
        for name in ("r0", "r1", "s0", "s1"):
            a = np.atleast_1d(np.asarray(getattr(self, name)))
            if np.any(a < 0):
                raise ValueError("counts must be non-negative")
            setattr(self, name, a)

    @property
    def n_blocks(self) -> int:
        return self.r0.size

    @property
    def repetitions(self) -> int:
        return self.n_blocks * self.shots_per_block

    @property
    def totals(self) -> tuple[float, float, float, float]:
        return float(self.r0.sum()), float(self.r1.sum()), float(self.s0.sum()), float(self.s1.sum())


class ZeroCountsError(ValueError):
    """Raised when a ratio of counts is undefined."""


def evolve_populations(rates: NvRates, laser_on: bool, populations, duration: float,
                       laser_power_mw: float = 15.0):
    """Propagate the rate equations for ``duration`` seconds.

    Returns ``(final_populations, expected_photons)`` where the photon number
    is the detected radiative flux integrated over the interval (background
    excluded).
    """
    if duration < 0:
        raise ValueError("duration must be non-negative")
    p = np.asarray(populations, dtype=float)
    if p.shape != (5,) or np.any(p < -1e-15) or abs(p.sum() - 1) > 1e-9:
        raise ValueError("populations must be 5 non-negative numbers summing to 1")
    prop = _propagator(rates, bool(laser_on), float(laser_power_mw) if laser_on else 0.0, float(duration))
    out = prop[:, :5] @ p
    return out[:5], float(out[5])


@lru_cache(maxsize=4096)
def _propagator(rates: NvRates, laser_on: bool, power: float, duration: float) -> np.ndarray:
    """``expm`` of the rate matrix augmented with a photon accumulator row."""
    a = np.zeros((6, 6))
    a[:5, :5] = rates.rate_matrix(rates.pump_rate(power) if laser_on else 0.0)
    a[5, E0] = a[5, E1] = rates.collection_efficiency * rates.radiative
    out = expm(a * duration)
    out.setflags(write=False)
    return out


def _mw_mixing(transfer: float) -> np.ndarray:
    t = np.eye(5)
    t[G0, G0] = t[G1, G1] = 1 - transfer
    t[G1, G0] = t[G0, G1] = transfer
    return t


@lru_cache(maxsize=1024)
def _readout_operators(rates: NvRates, params: ReadoutParams):
    w_ro = params.readout_window * 1e-9
    w_sat = (params.laser_duration - params.readout_window) * 1e-9
    l1 = _propagator(rates, True, params.laser_power, w_ro)
    l2 = _propagator(rates, True, params.laser_power, w_sat)
    dark = _propagator(rates, False, 0.0, params.wait_time * 1e-9)[:5, :5]
    after_laser = dark @ l2[:5, :5] @ l1[:5, :5]
    # photons in the readout / saturation window as linear functionals of the entry state
    r_row = l1[5, :5]
    s_row = l2[5, :5] @ l1[:5, :5]
    bg = rates.background_rate(params.laser_power)
    return after_laser, r_row, s_row, bg * w_ro, bg * w_sat


def _rate_model_counts(rates: NvRates, params: ReadoutParams, transfer: float,
                       reference_transfer: float) -> np.ndarray:
    after_laser, r_row, s_row, bg_r, bg_s = _readout_operators(rates, params)
    ta = _mw_mixing(reference_transfer)
    tb = _mw_mixing(transfer)
    cycle = after_laser @ tb @ after_laser @ ta
    # periodic steady state of the alternating a/b cycle: cycle x = x, sum(x) = 1
    lhs = np.vstack([cycle - np.eye(5), np.ones((1, 5))])
    rhs = np.zeros(6)
    rhs[-1] = 1.0
    x_a = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    y_a = ta @ x_a
    y_b = tb @ (after_laser @ y_a)
    return np.array([r_row @ y_a + bg_r, s_row @ y_a + bg_s, r_row @ y_b + bg_r, s_row @ y_b + bg_s])


@dataclass(frozen=True)
class PlantedReadout:
    """Synthetic readout source whose contrast peaks at known parameters.

    ``contrast = c_max / (1 + sum_i (delta_i / width_i)**2)`` where ``delta``
    is the offset from ``optimum`` in (power, duration, window fraction, wait)
    and each width is ``width_fraction`` of the corresponding bound range.
    Saturation windows are identical for both spin states.
    """

    optimum: ReadoutParams
    c_max: float = 0.35
    counts_per_shot: float = 1.0
    saturation_counts_per_shot: float = 1.0
    width_fraction: float = 0.2

    def contrast(self, params: ReadoutParams) -> float:
        ranges = np.array([
            POWER_BOUNDS_MW[1] - POWER_BOUNDS_MW[0],
            DURATION_BOUNDS_NS[1] - DURATION_BOUNDS_NS[0],
            WINDOW_FRACTION_BOUNDS[1] - WINDOW_FRACTION_BOUNDS[0],
            WAIT_BOUNDS_NS[1] - WAIT_BOUNDS_NS[0],
        ])

        def coords(p):
            return np.array([p.laser_power, p.laser_duration, p.readout_window / p.laser_duration, p.wait_time])

        d = (coords(params) - coords(self.optimum)) / (self.width_fraction * ranges)
        return self.c_max / (1.0 + float(d @ d))

    def expected_counts(self, params: ReadoutParams, transfer: float = 1.0,
                        reference_transfer: float = 0.0) -> np.ndarray:
        c = self.contrast(params)
        r = self.counts_per_shot
        s = self.saturation_counts_per_shot
        return np.array([r * (1 + c - 2 * c * reference_transfer), s, r * (1 + c - 2 * c * transfer), s])


def simulate_readout(source, params: ReadoutParams, repetitions: int, rng=None, *,
                     transfer: float = 1.0, reference_transfer: float = 0.0, blocks: int = 10,
                     noiseless: bool = False) -> ReadoutCounts:
    """Simulate ``repetitions`` shots of each readout (spin 0 and spin 1).

    ``source`` provides ``expected_counts(params, transfer)``: an
    :class:`NvRates` rate model or a :class:`PlantedReadout`.  ``transfer`` is
    the population moved to m_s = 1 by the microwave pulse of the
    Readout 1 shot; ``reference_transfer`` plays the same role for the
    Readout 0 shot (normally 0).  Shots are grouped into ``blocks`` repetition blocks; each
    block count is Poisson distributed with the summed mean.
    """
    params.check()
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    for q in (transfer, reference_transfer):
        if not -1e-12 <= q <= 1 + 1e-12:
            raise ValueError("transfer probabilities must lie in [0, 1]")
    blocks = max(1, min(blocks, repetitions))
    shots = repetitions // blocks
    q_b = float(np.clip(transfer, 0.0, 1.0))
    q_a = float(np.clip(reference_transfer, 0.0, 1.0))
    mean = np.asarray(source.expected_counts(params, q_b, q_a), dtype=float) * shots
    if noiseless:
        draws = np.tile(mean, (blocks, 1))
    else:
        rng = np.random.default_rng(rng)
        draws = rng.poisson(mean, size=(blocks, 4))
    return ReadoutCounts(draws[:, 0], draws[:, 2], draws[:, 1], draws[:, 3], shots_per_block=shots)


def contrast(counts) -> float:
    """``(R0 - R1) / (R0 + R1)`` from totals; accepts ReadoutCounts or an ``(R0, R1)`` pair."""
    r0, r1 = _r_pair(counts)
    total = r0 + r1
    if total <= 0:
        raise ZeroCountsError("contrast undefined for zero total counts")
    return (r0 - r1) / total


def _r_pair(counts):
    if isinstance(counts, ReadoutCounts):
        r0, r1, _, _ = counts.totals
        return r0, r1
    r0, r1 = counts
    return float(r0), float(r1)


@dataclass(frozen=True)
class ReadoutNoise:
    sigma_r: float
    fidelity: float
    fidelity_from_contrast: float


def readout_noise(counts) -> ReadoutNoise:
    """Noise parameter ``sigma_R = sqrt(1 + 2(R0+R1)/(R0-R1)**2)`` and fidelity ``1/sigma_R``.

    ``fidelity_from_contrast`` evaluates the same quantity as
    ``1/sqrt(1 + 1/(C**2 R))`` with ``R = (R0 + R1)/2``.
    """
    r0, r1 = _r_pair(counts)
    if r0 == r1:
        raise ZeroCountsError("R0 == R1: sigma_R is infinite")
    sigma = np.sqrt(1 + 2 * (r0 + r1) / (r0 - r1) ** 2)
    c = (r0 - r1) / (r0 + r1)
    r_mean = 0.5 * (r0 + r1)
    return ReadoutNoise(float(sigma), float(1 / sigma), float(1 / np.sqrt(1 + 1 / (c * c * r_mean))))


def fom_readout(counts: ReadoutCounts, saturation_term: str = "variance") -> float:
    """Readout figure of merit ``1 - C * (1 - V)`` (lower is better).

    ``V`` is computed from the per-block normalized saturation differences
    ``d_j = |S0_j - S1_j| / mean(S0 + S1)``: their sample variance
    (``"variance"``, the default) or their mean square (``"second_moment"``,
    which also penalizes a systematic S0/S1 imbalance).
    """
    if counts.n_blocks < 2:
        raise ValueError("fom_readout needs at least two repetition blocks")
    norm = np.mean(counts.s0 + counts.s1)
    if norm <= 0:
        raise ZeroCountsError("saturation windows recorded no counts")
    d = np.abs(counts.s0 - counts.s1) / norm
    if saturation_term == "variance":
        v = np.var(d, ddof=1)
    elif saturation_term == "second_moment":
        v = np.mean(d * d)
    else:
        raise ValueError(f"unknown saturation_term {saturation_term!r}")
    return float(1 - contrast(counts) * (1 - v))
