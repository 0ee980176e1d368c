"""Two-level spin dynamics in the rotating frame.

The drive-frame Hamiltonian is

    H(t) = 1/2 * (delta * sz + u1(t) * sx + u2(t) * sy)        (hbar = 1)

with the in-phase/quadrature controls ``u1 = Omega cos(phi)`` and
``u2 = Omega sin(phi)`` given in rad/s.  Pulses are piecewise constant, so the
time-ordered propagator is an ordered product of closed-form SU(2) factors and
is unitary to machine precision.

Conventions
-----------
- Basis ordering is ``(|0>, |1>)`` with ``|0>`` the m_s = 0 state.
- Global phases are ignored; every contract is stated on ``|amplitude|**2``.
- Sample ``k`` of a pulse covers ``[k*dt, (k+1)*dt)``, so the pulse is
  implicitly zero before ``t = 0`` and after ``t = t_p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

TWO_PI = 2.0 * np.pi


class InvalidPulseError(ValueError):
    """Raised for pulses with non-finite samples or out-of-range amplitudes."""


def hz_to_rad(f):
    """Convert a frequency in Hz to an angular frequency in rad/s."""
    return TWO_PI * np.asarray(f, dtype=float) if np.ndim(f) else TWO_PI * float(f)


def rad_to_hz(w):
    return np.asarray(w, dtype=float) / TWO_PI if np.ndim(w) else float(w) / TWO_PI


@dataclass(frozen=True)
class RwaHamiltonianParams:
    """Detuning ``omega_mw - omega_nv`` and maximum Rabi frequency, both rad/s."""

    detuning: float
    rabi_max: float

    def __post_init__(self):
        if not np.isfinite(self.detuning):
            raise ValueError("detuning must be finite")
        if not (np.isfinite(self.rabi_max) and self.rabi_max > 0):
            raise ValueError("rabi_max must be positive")


@dataclass(eq=False)
class ControlPulse:
    """Sampled I/Q microwave envelope.

    Parameters
    ----------
    samples : array_like, shape (n, 2)
        ``(u1, u2)`` per time step in rad/s.
    dt : float
        Step length in seconds.
    rabi_max : float, optional
        Amplitude ceiling in rad/s.  When given, every sample must satisfy
        ``hypot(u1, u2) <= rabi_max``.
    meta : dict
        Free-form provenance (basis kind, superiteration, ...).
    """

    samples: np.ndarray
    dt: float
    rabi_max: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = np.stack([s, np.zeros_like(s)], axis=1)
        if s.ndim != 2 or s.shape[1] != 2:
            raise InvalidPulseError(f"samples must have shape (n, 2), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidPulseError("pulse contains non-finite samples")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidPulseError("dt must be positive")
        if self.rabi_max is not None:
            peak = np.max(np.hypot(s[:, 0], s[:, 1]), initial=0.0)
            if peak > self.rabi_max * (1 + 1e-9):
                raise InvalidPulseError(
                    f"peak amplitude {peak:.6g} rad/s exceeds rabi_max {self.rabi_max:.6g}"
                )
        s.setflags(write=False)
        self.samples = s

    @classmethod
    def rectangular(cls, rabi, duration, dt, phase=0.0, rabi_max=None):
        """Constant-amplitude pulse; ``dt`` is adjusted so a whole number of steps spans ``duration``."""
        n = max(int(round(duration / dt)), 1)
        dt = duration / n
        s = np.tile([rabi * np.cos(phase), rabi * np.sin(phase)], (n, 1))
        return cls(s, dt, rabi_max=rabi_max, meta={"shape": "rectangular"})

    @classmethod
    def zeros(cls, n, dt, rabi_max=None):
        return cls(np.zeros((n, 2)), dt, rabi_max=rabi_max)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    @property
    def times(self) -> np.ndarray:
        """Step midpoints in seconds."""
        return (np.arange(self.n_samples) + 0.5) * self.dt

    @property
    def u1(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def u2(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def amplitude(self) -> np.ndarray:
        return np.hypot(self.u1, self.u2)

    @property
    def phase(self) -> np.ndarray:
        return np.arctan2(self.u2, self.u1)

    def scaled(self, factor: float) -> "ControlPulse":
        return ControlPulse(self.samples * factor, self.dt, self.rabi_max, dict(self.meta))

    def then(self, other: "ControlPulse") -> "ControlPulse":
        """Concatenate ``other`` after this pulse (equal ``dt`` required)."""
        if not np.isclose(self.dt, other.dt, rtol=1e-12, atol=0):
            raise InvalidPulseError("cannot concatenate pulses with different dt")
        return ControlPulse(np.vstack([self.samples, other.samples]), self.dt, self.rabi_max)


def step_unitaries(u1, u2, detuning, dt):
    """Closed-form ``exp(-i dt H)`` for each piecewise-constant step.

    All arguments broadcast against each other; the result has the broadcast
    shape plus two trailing matrix axes.
    """
    hx, hy, hz = np.broadcast_arrays(
        np.asarray(u1, dtype=float), np.asarray(u2, dtype=float), np.asarray(detuning, dtype=float)
    )
    w = np.sqrt(hx * hx + hy * hy + hz * hz)
    theta = 0.5 * w * dt
    # sin(theta)/w without the 0/0 at w = 0
    s = 0.5 * dt * np.sinc(theta / np.pi)
    c = np.cos(theta)
    out = np.empty(hx.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c - 1j * s * hz
    out[..., 1, 1] = c + 1j * s * hz
    out[..., 0, 1] = -s * hy - 1j * s * hx
    out[..., 1, 0] = s * hy - 1j * s * hx
    return out


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """Time-ordered product ``U[n-1] @ ... @ U[0]`` along axis ``-3``.

    Pairs neighbouring factors in a balanced tree so the work is done in
    ``log2(n)`` batched matmuls.
    """
    u = np.asarray(steps)
    if u.shape[-3] == 0:
        return np.broadcast_to(IDENTITY, u.shape[:-3] + (2, 2)).copy()
    while u.shape[-3] > 1:
        if u.shape[-3] % 2:
            pad = np.broadcast_to(IDENTITY, u.shape[:-3] + (1, 2, 2))
            u = np.concatenate([u, pad], axis=-3)
        u = _matmul2(u[..., 1::2, :, :], u[..., 0::2, :, :])
    return u[..., 0, :, :]


def _matmul2(a, b):
    # explicit 2x2 products; several times faster than batched ``@`` on tiny matrices
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    a00, a01, a10, a11 = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    b00, b01, b10, b11 = b[..., 0, 0], b[..., 0, 1], b[..., 1, 0], b[..., 1, 1]
    out[..., 0, 0] = a00 * b00 + a01 * b10
    out[..., 0, 1] = a00 * b01 + a01 * b11
    out[..., 1, 0] = a10 * b00 + a11 * b10
    out[..., 1, 1] = a10 * b01 + a11 * b11
    return out


def propagate_batch(pulse: ControlPulse, detunings=0.0, scales=1.0) -> np.ndarray:
    """Propagators for every combination of broadcast ``detunings`` and ``scales``.

    Returns an array of shape ``broadcast(detunings, scales).shape + (2, 2)``.
    """
    d, s = np.broadcast_arrays(np.asarray(detunings, dtype=float), np.asarray(scales, dtype=float))
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(s))):
        raise ValueError("detunings and scales must be finite")
    d = d[..., None]
    s = s[..., None]
    steps = step_unitaries(s * pulse.u1, s * pulse.u2, d, pulse.dt)
    return ordered_product(steps)


def propagate(params: RwaHamiltonianParams, pulse: ControlPulse, amplitude_scale: float = 1.0) -> np.ndarray:
    """Propagator of ``pulse`` at detuning ``params.detuning`` with drive scaled by ``amplitude_scale``."""
    if not (0 < amplitude_scale <= 1):
        raise ValueError(f"amplitude_scale must lie in (0, 1], got {amplitude_scale}")
    peak = np.max(pulse.amplitude, initial=0.0)
    if peak > params.rabi_max * (1 + 1e-9):
        raise InvalidPulseError(
            f"pulse peak {peak:.6g} rad/s exceeds rabi_max {params.rabi_max:.6g}"
        )
    return propagate_batch(pulse, params.detuning, amplitude_scale)


def free_evolution(detuning, tau) -> np.ndarray:
    """Undriven precession ``exp(-i detuning tau sz / 2)``; broadcasts like ``step_unitaries``."""
    d, t = np.broadcast_arrays(np.asarray(detuning, dtype=float), np.asarray(tau, dtype=float))
    phase = 0.5 * d * t
    out = np.zeros(d.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-1j * phase)
    out[..., 1, 1] = np.exp(1j * phase)
    return out


def transfer_probability(u: np.ndarray) -> np.ndarray:
    """``|<1|U|0>|**2`` over any leading batch axes."""
    return np.abs(np.asarray(u)[..., 1, 0]) ** 2


# (|0> + i**a |1>)/sqrt(2) for a = 0..3
_SUPERPOSITION_LABELS = {"+": 0, "+i": 1, "-": 2, "-i": 3}


def spin_state(label) -> np.ndarray:
    """State vector for ``"0"``, ``"1"`` or a superposition label ``"+", "+i", "-", "-i"``.

    Superposition labels can also be given as ``("sup", a)`` with ``a`` in 0..3.
    """
    if isinstance(label, tuple) and len(label) == 2 and label[0] == "sup":
        a = label[1]
    else:
        key = str(label)
        if key == "0":
            return np.array([1, 0], dtype=complex)
        if key == "1":
            return np.array([0, 1], dtype=complex)
        if key not in _SUPERPOSITION_LABELS:
            raise ValueError(f"unknown spin-state label {label!r}")
        a = _SUPERPOSITION_LABELS[key]
    if a not in (0, 1, 2, 3):
        raise ValueError(f"superposition index must be in 0..3, got {a!r}")
    return np.array([1, 1j**a], dtype=complex) / np.sqrt(2)


def state_fidelity(u: np.ndarray, initial="0", target="1"):
    """``|<target|U|initial>|**2``; ``u`` may carry leading batch axes."""
    psi_i = spin_state(initial)
    psi_f = spin_state(target)
    amp = np.einsum("i,...ij,j->...", psi_f.conj(), np.asarray(u), psi_i)
    return np.abs(amp) ** 2


@dataclass(frozen=True)
class AxisAngleDecomposition:
    """``U = e^{i alpha} exp(-i (cx sx + cy sy + cz sz))`` with ``angle`` in ``[0, pi]``.

    ``degenerate`` is set when ``U`` is within tolerance of ``+-I``; the axis
    is then arbitrary and reported as x.
    """

    cx: float
    cy: float
    cz: float
    degenerate: bool = False

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def axis(self) -> np.ndarray:
        c = self.angle
        return self.vector / c if c > 0 else np.array([1.0, 0.0, 0.0])


def axis_angle_unitary(c) -> np.ndarray:
    """``exp(-i c . sigma)`` for vectors ``c`` of shape ``(..., 3)``."""
    c = np.asarray(c, dtype=float)
    # step_unitaries computes exp(-i dt/2 h.sigma); choose dt = 2, h = c
    return step_unitaries(c[..., 0], c[..., 1], c[..., 2], 2.0)


def decompose(u: np.ndarray, tol: float = 1e-9) -> AxisAngleDecomposition:
    """Axis-angle coefficients of a 2x2 unitary, principal branch ``c in [0, pi]``.

    The global phase is removed by dividing by the principal square root of
    ``det(U)``; the resulting SU(2) element fixes ``c`` uniquely on ``[0, pi]``.
    A different square-root sign maps ``(c, n)`` to ``(pi - c, -n)``, which is
    the same operation up to global phase.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError("decompose expects a single 2x2 matrix")
    if not np.allclose(u.conj().T @ u, IDENTITY, atol=1e-8):
        raise ValueError("matrix is not unitary")
    v = u / np.sqrt(np.linalg.det(u))
    cos_c = 0.5 * (v[0, 0] + v[1, 1]).real
    n_sin = np.array(
        [
            -0.5 * (v[0, 1] + v[1, 0]).imag,
            0.5 * (v[1, 0] - v[0, 1]).real,
            -0.5 * (v[0, 0] - v[1, 1]).imag,
        ]
    )
    sin_c = np.linalg.norm(n_sin)
    c = float(np.arctan2(sin_c, cos_c))
    if sin_c < tol:
        return AxisAngleDecomposition(c, 0.0, 0.0, degenerate=True)
    cx, cy, cz = c * n_sin / sin_c
    return AxisAngleDecomposition(float(cx), float(cy), float(cz))
