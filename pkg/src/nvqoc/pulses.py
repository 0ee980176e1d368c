"""Random-basis pulse expansions and amplitude restrictions for dCRAB.

A pulse is written as ``u(t) = u0(t) + sum_n A_n f(omega_n; t)`` per channel,
where the superparameters ``omega_n`` are drawn at random once per
superiteration and only the coefficients ``A_n`` are optimized.

Two bases are provided:

``fourier``
    ``sin(omega t)`` and ``cos(omega t)`` for each drawn frequency (two
    elements per superparameter).
``sigmoid``
    Error-function steps ``Phi((t - omega)/sigma) - Phi(-omega/sigma)``, i.e.
    the running integral of a normalized Gaussian centred at offset
    ``omega``.  A step at ``eps*sigma`` is always present, and every step is
    paired with a closing step at ``t_p - eps*sigma`` so that the net
    envelope returns to the initial guess at ``t_p``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .spin import ControlPulse

DEFAULT_EPS = 4.0


class BasisKind(str, enum.Enum):
    FOURIER = "fourier"
    SIGMOID = "sigmoid"


class RestrictionMode(str, enum.Enum):
    CUT_OFF = "cutoff"
    BANDWIDTH_LIMITED = "bandwidth"


@dataclass(frozen=True)
class BasisElement:
    """One basis function.

    ``superparameter`` is an angular frequency (rad/s) for Fourier elements
    and a time offset (s) for Sigmoid elements.  ``sub_index`` selects sin (1)
    or cos (2) for Fourier; it is always 1 for Sigmoid.  ``width`` is the
    Sigmoid rise time ``sigma`` in seconds.
    """

    kind: BasisKind
    superparameter: float
    sub_index: int = 1
    width: float | None = None


def default_sigma(duration: float) -> float:
    return duration / 20.0


def default_bounds(kind, duration: float, sigma: float | None = None, eps: float = DEFAULT_EPS):
    """Superparameter interval: ``[0, 2 pi * 10 / t_p]`` or ``[eps sigma, t_p - eps sigma]``."""
    kind = BasisKind(kind)
    if kind is BasisKind.FOURIER:
        return 0.0, 2 * np.pi * 10.0 / duration
    sigma = default_sigma(duration) if sigma is None else sigma
    return eps * sigma, duration - eps * sigma


def sample_basis(kind, n_set: int, bounds, rng_seed=None, *, sigma: float | None = None,
                 eps: float = DEFAULT_EPS) -> list[BasisElement]:
    """Draw ``n_set`` superparameters uniformly from ``bounds``.

    Fourier draws give two elements (sin, cos) per frequency.  Sigmoid draws
    are preceded by the anchored step at ``eps * sigma``; ``sigma`` is required
    for that basis.  ``rng_seed`` may be an int, ``None`` or a Generator.
    """
    kind = BasisKind(kind)
    lo, hi = map(float, bounds)
    if not hi > lo:
        raise ValueError(f"empty superparameter interval [{lo}, {hi}]")
    if n_set < 0:
        raise ValueError("n_set must be non-negative")
    rng = np.random.default_rng(rng_seed)
    draws = rng.uniform(lo, hi, size=n_set)
    if kind is BasisKind.FOURIER:
        if lo < 0:
            raise ValueError("Fourier frequencies must be non-negative")
        return [BasisElement(kind, float(w), i) for w in draws for i in (1, 2)]
    if sigma is None or sigma <= 0:
        raise ValueError("sigmoid basis needs a positive width sigma")
    if lo < eps * sigma - 1e-15:
        raise ValueError("sigmoid offsets must be at least eps * sigma")
    anchor = BasisElement(kind, eps * sigma, 1, sigma)
    return [anchor] + [BasisElement(kind, float(w), 1, sigma) for w in draws]


def _sigmoid(offset, sigma, t):
    return ndtr((t - offset) / sigma) - ndtr(-offset / sigma)


def basis_functions(elements, t, duration: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Matrix ``F[k, n]`` of element ``n`` evaluated at times ``t[k]``.

    Sigmoid columns already include their share of the automatic closing
    step, ``f_n(t) - f_close(t)``, so the expansion stays linear in ``A_n``.
    """
    t = np.asarray(t, dtype=float)
    cols = []
    for el in elements:
        if el.kind is BasisKind.FOURIER:
            fn = np.sin if el.sub_index == 1 else np.cos
            cols.append(fn(el.superparameter * t))
        else:
            close = duration - eps * el.width
            cols.append(_sigmoid(el.superparameter, el.width, t) - _sigmoid(close, el.width, t))
    if not cols:
        return np.zeros((t.size, 0))
    return np.stack(cols, axis=-1)


@dataclass(eq=False)
class PulseExpansion:
    """Initial guess plus a set of basis elements shared by both channels.

    ``coefficients`` passed to :meth:`evaluate` have shape
    ``(2, len(elements))`` (or the flattened equivalent).
    """

    initial: ControlPulse
    elements: list[BasisElement]
    eps: float = DEFAULT_EPS
    _basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._basis = basis_functions(self.elements, self.initial.times, self.initial.duration, self.eps)

    @property
    def n_coefficients(self) -> int:
        return 2 * len(self.elements)

    @property
    def n_set(self) -> int:
        kinds = {el.kind for el in self.elements}
        if kinds == {BasisKind.FOURIER}:
            return len(self.elements) // 2
        return len(self.elements)

    def evaluate(self, coefficients) -> ControlPulse:
        return evaluate_expansion(self, coefficients)


def evaluate_expansion(expansion: PulseExpansion, coefficients) -> ControlPulse:
    """Raw (unrestricted) two-channel waveform ``u0 + F @ A`` on the pulse grid."""
    a = np.asarray(coefficients, dtype=float)
    n_el = len(expansion.elements)
    if a.size != 2 * n_el:
        raise ValueError(f"expected {2 * n_el} coefficients, got {a.size}")
    a = a.reshape(2, n_el)
    u0 = expansion.initial
    raw = u0.samples + expansion._basis @ a.T
    return ControlPulse(raw, u0.dt, rabi_max=None, meta=dict(u0.meta))


@dataclass(frozen=True)
class RestrictionPolicy:
    """Amplitude and duration limits applied to a raw waveform.

    ``a_max`` bounds each channel; ``rabi_max`` (default ``a_max``) bounds the
    joint magnitude ``hypot(u1, u2)`` so the result is a valid drive.
    ``plateau`` and ``edge_sigma`` shape the flat-top Gaussian window as
    fractions of the pulse duration.
    """

    mode: RestrictionMode
    a_max: float
    rabi_max: float | None = None
    plateau: float = 0.8
    edge_sigma: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mode", RestrictionMode(self.mode))
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")

    @property
    def magnitude_cap(self) -> float:
        return self.a_max if self.rabi_max is None else self.rabi_max

    def apply(self, raw: ControlPulse) -> ControlPulse:
        return apply_restriction(self, raw)


def flat_top_window(n: int, plateau: float = 0.8, edge_sigma: float = 0.05) -> np.ndarray:
    """Flat-top Gaussian window over ``n`` samples, exactly 0 at both ends.

    The first and last samples sit at normalized positions 0 and 1; the
    plateau covers the central ``plateau`` fraction.  Gaussian shoulders are
    offset so they reach zero at the ends and rescaled to meet the plateau.
    """
    if n == 1:
        return np.zeros(1)
    x = np.linspace(0.0, 1.0, n)
    edge = 0.5 * (1.0 - plateau)
    dist = np.maximum(edge - np.minimum(x, 1.0 - x), 0.0)
    g = np.exp(-0.5 * (dist / edge_sigma) ** 2)
    g_end = np.exp(-0.5 * (edge / edge_sigma) ** 2)
    w = (g - g_end) / (1.0 - g_end)
    w[0] = w[-1] = 0.0
    return w


def _fit_channel(x: np.ndarray, a_max: float) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if lo >= -a_max and hi <= a_max:
        return x
    if hi - lo <= 2 * a_max:
        # minimal shift that brings the violating extreme onto the limit
        return x + (a_max - hi if hi > a_max else -a_max - lo)
    return -a_max + (x - lo) * (2 * a_max / (hi - lo))


def _cap_magnitude(s: np.ndarray, cap: float) -> np.ndarray:
    mag = np.hypot(s[:, 0], s[:, 1])
    over = mag > cap
    if np.any(over):
        s = s.copy()
        s[over] *= (cap / mag[over])[:, None]
    return s


def apply_restriction(policy: RestrictionPolicy, raw: ControlPulse) -> ControlPulse:
    """Force ``raw`` inside the amplitude limits.

    ``cutoff`` clips each channel to ``[-a_max, a_max]``; the time limits are
    implicit in the sample grid.  ``bandwidth`` shifts or rescales each
    channel (identity when already inside the limits), then multiplies by the
    flat-top window so the first and last samples are exactly zero.  Both modes
    finish by capping the joint magnitude at ``policy.magnitude_cap``.
    """
    s = np.array(raw.samples, dtype=float)
    a = policy.a_max
    if policy.mode is RestrictionMode.CUT_OFF:
        s = np.clip(s, -a, a)
    else:
        s = np.stack([_fit_channel(s[:, 0], a), _fit_channel(s[:, 1], a)], axis=1)
        s *= flat_top_window(s.shape[0], policy.plateau, policy.edge_sigma)[:, None]
    cap = policy.magnitude_cap
    s = _cap_magnitude(s, cap)
    meta = dict(raw.meta)
    meta["restriction"] = policy.mode.value
    # guard the ControlPulse check against round-off in the radial rescale
    return ControlPulse(s, raw.dt, rabi_max=cap * (1 + 1e-12), meta=meta)


# --- pulse files -----------------------------------------------------------

PULSE_FORMAT = "nvqoc-pulse/1"


def format_pulse(pulse: ControlPulse, rabi_max: float | None = None) -> str:
    """Columnar text: step start time (ns) and both channels as fractions of ``rabi_max``."""
    ref = rabi_max or pulse.rabi_max
    if not ref:
        raise ValueError("a reference rabi_max is needed to write amplitudes as fractions")
    lines = [
        f"# format: {PULSE_FORMAT}",
        f"# dt_ns: {pulse.dt * 1e9:.9g}",
        f"# rabi_max_rad_per_s: {ref:.9g}",
        "# columns: time_ns u1_frac u2_frac",
    ]
    t = np.arange(pulse.n_samples) * pulse.dt * 1e9
    for tk, (a, b) in zip(t, pulse.samples / ref):
        lines.append(f"{tk:.9g} {a:.9g} {b:.9g}")
    return "\n".join(lines) + "\n"


def parse_pulse(text: str) -> ControlPulse:
    header = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
            continue
        rows.append([float(v) for v in line.split()])
    if header.get("format") != PULSE_FORMAT:
        raise ValueError(f"not a {PULSE_FORMAT} file")
    ref = float(header["rabi_max_rad_per_s"])
    dt = float(header["dt_ns"]) * 1e-9
    data = np.array(rows, dtype=float).reshape(-1, 3)
    samples = data[:, 1:] * ref
    return ControlPulse(samples, dt, rabi_max=ref * (1 + 1e-8))


def write_pulse(path, pulse: ControlPulse, rabi_max: float | None = None) -> None:
    Path(path).write_text(format_pulse(pulse, rabi_max), encoding="utf-8")


def read_pulse(path) -> ControlPulse:
    return parse_pulse(Path(path).read_text(encoding="utf-8"))
