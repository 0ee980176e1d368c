"""Measurement sequences built from spin dynamics and optical readout.

All functions average the spin transfer over the hyperfine lines and the
quasi-static dephasing ensemble of the model, then hand the resulting
m_s = 1 population to the photon-counting readout (the laser pulse destroys
coherence, so only populations reach the detector).

Randomness: ``seed`` fixes the photon-count noise.  Each scan point draws from
its own generator derived from ``(seed, point index)``, so results do not
depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import HyperfineModel, NvModel
from .photophysics import ReadoutParams, simulate_readout
from .spin import ControlPulse, free_evolution, propagate_batch

__all__ = [
    "AmplitudeScan",
    "SequenceResult",
    "FringeResult",
    "HyperfineModel",
    "ensemble_transfer",
    "podmr_fom",
    "podmr_spectrum",
    "gate_verification_populations",
    "gate_verification_fom",
    "ramsey_fringe",
    "robust_transfer",
    "fringe_visibility",
]

DEFAULT_SCALES = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class AmplitudeScan:
    """Relative drive amplitudes at which a pulse is assessed."""

    scales: tuple = DEFAULT_SCALES

    def __post_init__(self):
        s = tuple(float(x) for x in self.scales)
        if not s:
            raise ValueError("scan needs at least one scale")
        if any(not 0 < x <= 1 for x in s):
            raise ValueError("scales must lie in (0, 1]")
        object.__setattr__(self, "scales", tuple(sorted(s)))

    @classmethod
    def uniform(cls, n: int = 5, lo: float = 0.2, hi: float = 1.0) -> "AmplitudeScan":
        return cls(tuple(np.linspace(lo, hi, n)))

    @property
    def n_points(self) -> int:
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)


@dataclass(eq=False)
class SequenceResult:
    """Per-scale counts and contrasts of a robust figure of merit.

    ``counts_a``/``counts_b`` are the totals of the two readouts per scale
    (``R0, R1`` for pulsed ODMR, ``P0, P1`` for gate verification);
    ``transfers`` is the spin population behind ``counts_b``.
    """

    kind: str
    scales: np.ndarray
    counts_a: np.ndarray
    counts_b: np.ndarray
    transfers: np.ndarray
    fom: float
    fom_se: float
    reference_transfers: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def contrasts(self) -> np.ndarray:
        return (self.counts_a - self.counts_b) / (self.counts_a + self.counts_b)

    @property
    def mean_transfer(self) -> float:
        return float(np.mean(self.transfers))

    def recompute_fom(self) -> float:
        return float(1.0 - np.mean(self.contrasts))


def _point_rng(seed, index):
    if seed is None:
        return None
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(index),)))


def _contrast_var(a, b):
    # delta-method variance of (a - b)/(a + b) for independent Poisson totals
    return 4.0 * a * b / (a + b) ** 3


def ensemble_transfer(pulse: ControlPulse, model: NvModel, detuning: float = 0.0, scales=1.0,
                      rng=None) -> np.ndarray:
    """``|<1|U|0>|**2`` averaged over the model's detuning ensemble, per scale."""
    d, w = model.ensemble(rng)
    s = np.atleast_1d(np.asarray(scales, dtype=float))
    u = propagate_batch(pulse, detuning + d[:, None], s[None, :])
    p = np.abs(u[..., 1, 0]) ** 2
    return w @ p


def robust_transfer(pulse: ControlPulse, scan: AmplitudeScan, detunings=(0.0,), weights=None) -> np.ndarray:
    """Spin-only inversion probability per scale, averaged over ``detunings``."""
    d = np.asarray(detunings, dtype=float)
    w = np.full(d.size, 1.0 / d.size) if weights is None else np.asarray(weights, dtype=float)
    u = propagate_batch(pulse, d[:, None], np.asarray(scan.scales)[None, :])
    return w @ (np.abs(u[..., 1, 0]) ** 2)


def _two_shot(model, readout, shots, seed, index, transfer, reference_transfer, noiseless):
    counts = simulate_readout(model.readout_source, readout, shots, _point_rng(seed, index),
                              transfer=transfer, reference_transfer=reference_transfer,
                              noiseless=noiseless)
    r_a, r_b, _, _ = counts.totals
    return r_a, r_b


def _finish(kind, scan, a, b, transfers, noiseless, reference=None):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a + b <= 0):
        raise ValueError("a readout recorded no photons; increase the shot budget")
    c = (a - b) / (a + b)
    fom = float(1.0 - c.mean())
    se = 0.0 if noiseless else float(np.sqrt(np.sum(_contrast_var(a, b))) / len(c))
    return SequenceResult(kind, np.asarray(scan.scales), a, b, np.asarray(transfers), fom, se,
                          np.zeros(0) if reference is None else np.asarray(reference))


def podmr_fom(pulse: ControlPulse, scan: AmplitudeScan, detuning: float, model: NvModel,
              readout: ReadoutParams, shots: int = 100_000, seed=None, noiseless: bool = False,
              dephasing_rng=None) -> SequenceResult:
    """Amplitude-robust pulsed-ODMR figure of merit ``1 - mean_k C_k``.

    ``detuning`` is ``omega_mw - omega_nv`` in rad/s.  For every scale the
    inversion probability is converted into Readout 0 / Readout 1 counts
    (``shots`` repetitions each).
    """
    p = ensemble_transfer(pulse, model, detuning, scan.scales, dephasing_rng)
    a, b = zip(*(_two_shot(model, readout, shots, seed, k, float(pk), 0.0, noiseless)
                 for k, pk in enumerate(p)))
    return _finish("podmr", scan, a, b, p, noiseless)


def podmr_spectrum(pulse: ControlPulse, scan: AmplitudeScan, detunings, model: NvModel,
                   readout: ReadoutParams, shots: int = 100_000, seed=None,
                   noiseless: bool = False) -> np.ndarray:
    """Normalized counts ``N_ph[k, j]`` for scale ``k`` and drive detuning ``j``.

    Counts are divided by the m_s = 0 reference readout of the same point,
    i.e. by the baseline observed where no spin transfer occurs.
    """
    det = np.atleast_1d(np.asarray(detunings, dtype=float))
    d, w = model.ensemble()
    u = propagate_batch(pulse, det[None, :, None] + d[None, None, :],
                        np.asarray(scan.scales)[:, None, None])
    p = (np.abs(u[..., 1, 0]) ** 2) @ w
    out = np.empty_like(p)
    for idx in np.ndindex(p.shape):
        flat = np.ravel_multi_index(idx, p.shape)
        ref, sig = _two_shot(model, readout, shots, seed, flat, float(p[idx]), 0.0, noiseless)
        out[idx] = sig / ref
    return out


def gate_verification_populations(u: np.ndarray, pi_x: np.ndarray):
    """Spin populations of the two gate-verification sequences.

    Returns ``(p0_a, p1_b)``: the m_s = 0 population after ``U pi_x U`` and
    the m_s = 1 population after ``U U``, both starting from ``|0>``.
    Broadcasts over leading axes of ``u`` and ``pi_x``.
    """
    u = np.asarray(u)
    seq_a = u @ pi_x @ u
    seq_b = u @ u
    return np.abs(seq_a[..., 0, 0]) ** 2, np.abs(seq_b[..., 1, 0]) ** 2


def gate_verification_fom(pulse: ControlPulse, scan: AmplitudeScan, detuning: float, model: NvModel,
                          readout: ReadoutParams, shots: int = 100_000, seed=None,
                          noiseless: bool = False, reference: ControlPulse | None = None,
                          dephasing_rng=None) -> SequenceResult:
    """Robust figure of merit for a (pi/2)_x gate, ``1 - mean_k (P0 - P1)/(P0 + P1)``.

    Sequence A (``U pi_x U``) is read as ``P0`` and sequence B (``U U``) as
    ``P1``.  ``U`` is driven at each scan amplitude; the rectangular ``pi_x``
    reference always runs at full amplitude.
    """
    if reference is None:
        reference = model.pi_x()
    d, w = model.ensemble(dephasing_rng)
    s = np.asarray(scan.scales)
    u = propagate_batch(pulse, detuning + d[:, None], s[None, :])
    pi = propagate_batch(reference, detuning + d, 1.0)[:, None]
    p0_a, p1_b = gate_verification_populations(u, pi)
    q_a = w @ (1.0 - p0_a)
    q_b = w @ p1_b
    a, b = zip(*(_two_shot(model, readout, shots, seed, k, float(q_b[k]), float(q_a[k]), noiseless)
                 for k in range(len(s))))
    return _finish("ramsey-gate", scan, a, b, q_b, noiseless, reference=q_a)


@dataclass(eq=False)
class FringeResult:
    taus: np.ndarray
    n_ph: np.ndarray
    n_ph_se: np.ndarray
    transfers: np.ndarray
    reference_counts: np.ndarray


def ramsey_fringe(pulse_half: ControlPulse, taus, detuning: float, model: NvModel,
                  readout: ReadoutParams, shots: int = 100_000, seed=None, noiseless: bool = False,
                  amplitude_scale: float = 1.0, dephasing_rng=None) -> FringeResult:
    """Ramsey signal ``U F(tau) U`` normalized by the m_s = 0 readout.

    ``F(tau)`` is free precession at each line's detuning plus the
    quasi-static offset; the same offset also acts during both pulses.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 0):
        raise ValueError("free precession times must be non-negative")
    d, w = model.ensemble(dephasing_rng)
    det = detuning + d
    u = propagate_batch(pulse_half, det, amplitude_scale)
    f = free_evolution(det[None, :], taus[:, None])
    seq = u[None] @ f @ u[None]
    q = (np.abs(seq[..., 1, 0]) ** 2) @ w
    n_ph = np.empty(taus.size)
    se = np.empty(taus.size)
    ref = np.empty(taus.size)
    for j, qj in enumerate(q):
        r_ref, r_sig = _two_shot(model, readout, shots, seed, j, float(qj), 0.0, noiseless)
        n_ph[j] = r_sig / r_ref
        ref[j] = r_ref
        se[j] = 0.0 if noiseless else n_ph[j] * np.sqrt(1.0 / max(r_sig, 1.0) + 1.0 / max(r_ref, 1.0))
    return FringeResult(taus, n_ph, se, q, ref)


def fringe_visibility(n_ph) -> float:
    """``(max - min) / (max + min)`` of a normalized fringe."""
    n = np.asarray(n_ph, dtype=float)
    return float((n.max() - n.min()) / (n.max() + n.min()))
