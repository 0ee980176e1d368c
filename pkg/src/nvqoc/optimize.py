"""Gradient-free optimizers: bounded Nelder-Mead and the dCRAB superiteration loop.

Both minimize.  Objective functions return either a float or a
``(value, standard_error)`` pair; the standard error is recorded but not used
for decisions.  Every evaluation is appended to ``OptimizerState.history`` and
optionally passed to a callback, which is how the loop runner streams progress
to its run log.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .pulses import (
    DEFAULT_EPS,
    BasisKind,
    PulseExpansion,
    RestrictionMode,
    RestrictionPolicy,
    default_bounds,
    default_sigma,
    sample_basis,
)
from .spin import ControlPulse

log = logging.getLogger(__name__)


class OptimizationAborted(RuntimeError):
    """The objective kept failing; ``state`` holds everything evaluated so far."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class ObjectiveFatal(RuntimeError):
    """Raised by an objective to stop the optimizer at once, without retries."""


@dataclass
class SearchSpace:
    """Box bounds plus optional coupled bounds.

    ``coupled`` maps a parameter index to a function of the full parameter
    vector returning that parameter's ``(lo, hi)``.  Coupled bounds are
    applied after the box, in index order, so they may depend on parameters
    with lower indices.
    """

    lo: np.ndarray
    hi: np.ndarray
    names: tuple = ()
    coupled: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(~(self.lo < self.hi)):
            raise ValueError("every lower bound must be below its upper bound")
        if not self.names:
            self.names = tuple(f"x{i}" for i in range(self.dim))

    @classmethod
    def symmetric(cls, dim: int, bound: float) -> "SearchSpace":
        return cls(np.full(dim, -bound), np.full(dim, bound))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def project(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        for i in sorted(self.coupled):
            lo, hi = self.coupled[i](x)
            x[i] = min(max(x[i], lo), hi)
        return x

    def contains(self, x, rtol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        slack = rtol * np.maximum(np.abs(self.span), 1.0)
        if np.any(x < self.lo - slack) or np.any(x > self.hi + slack):
            return False
        for i, fn in self.coupled.items():
            lo, hi = fn(x)
            tol = rtol * max(abs(hi - lo), 1.0)
            if not lo - tol <= x[i] <= hi + tol:
                return False
        return True


@dataclass
class NelderMeadConfig:
    """Simplex coefficients, stopping rules and noise handling.

    ``initial_step`` is the simplex edge per dimension; by default it is
    ``step_fraction`` of each bound range.  With ``reevaluate`` on, the
    incumbent vertex is measured again every ``reeval_every`` evaluations
    (default ``2 * (dim + 1)``) and its estimate becomes the running mean.
    """

    alpha: float = 1.0
    gamma: float = 2.0
    rho: float = 0.5
    sigma: float = 0.5
    step_fraction: float = 0.1
    initial_step: np.ndarray | None = None
    tol_f: float = 1e-3
    tol_x: float | None = None
    max_evals: int = 500
    reevaluate: bool = False
    reeval_every: int | None = None
    max_retries: int = 2


@dataclass(frozen=True)
class EvalRecord:
    index: int
    x: np.ndarray
    fom: float
    fom_se: float
    kind: str
    superiteration: int = 0


@dataclass
class OptimizerState:
    n_evals: int = 0
    iterations: int = 0
    best_x: np.ndarray | None = None
    best_fom: float = np.inf
    best_se: float = 0.0
    best_count: int = 0
    best_superiteration: int = 0
    superiteration: int = 0
    converged: bool = False
    reason: str = ""
    history: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def snapshot(self) -> "OptimizerState":
        return copy.deepcopy(self)


class _Vertex:
    __slots__ = ("x", "values", "ses")

    def __init__(self, x, value, se):
        self.x = x
        self.values = [value]
        self.ses = [se]

    @property
    def f(self) -> float:
        return float(np.mean(self.values))

    @property
    def se(self) -> float:
        n = len(self.ses)
        return float(np.sqrt(np.sum(np.square(self.ses))) / n)


def _split(result):
    if isinstance(result, tuple):
        value, se = result
        return float(value), float(se)
    return float(result), 0.0


class _Evaluator:
    def __init__(self, fn, space, cfg, state, callback, superiteration):
        self.fn = fn
        self.space = space
        self.cfg = cfg
        self.state = state
        self.callback = callback
        self.superiteration = superiteration

    def __call__(self, x, kind="new"):
        last = None
        for _ in range(self.cfg.max_retries + 1):
            try:
                value, se = _split(self.fn(x))
                if not np.isfinite(value):
                    raise ValueError(f"objective returned {value}")
                break
            except ObjectiveFatal:
                raise
            except Exception as exc:  # noqa: BLE001 - any other objective failure is retried
                last = exc
                log.warning("objective failed at %s: %s", x, exc)
        else:
            self.state.reason = f"objective failed: {last}"
            raise OptimizationAborted(self.state.reason, self.state.snapshot()) from last
        st = self.state
        rec = EvalRecord(st.n_evals, np.array(x), value, se, kind, self.superiteration)
        st.n_evals += 1
        st.history.append(rec)
        if self.callback is not None:
            self.callback(rec)
        return value, se


def nelder_mead(space: SearchSpace, fom_fn: Callable, x0=None, config: NelderMeadConfig | None = None,
                callback: Callable | None = None, state: OptimizerState | None = None,
                superiteration: int = 0) -> OptimizerState:
    """Minimize ``fom_fn`` over ``space`` with a projected Nelder-Mead simplex.

    Every proposal (reflection, expansion, contraction, shrink) is projected
    onto the feasible set before evaluation, so the objective never sees an
    infeasible point.  Deterministic for a deterministic objective.

    Parameters
    ----------
    space : SearchSpace
    fom_fn : callable
        ``fom_fn(x) -> float | (float, se)``.
    x0 : array_like, optional
        Start vertex; defaults to the centre of the box.
    state : OptimizerState, optional
        Continue recording into an existing state (used by dCRAB).
    """
    cfg = config or NelderMeadConfig()
    state = state if state is not None else OptimizerState()
    state.converged = False
    n = space.dim
    x0 = space.project(0.5 * (space.lo + space.hi) if x0 is None else x0)
    if not space.contains(x0):
        raise ValueError("initial guess is infeasible")
    evaluate = _Evaluator(fom_fn, space, cfg, state, callback, superiteration)
    budget_start = state.n_evals
    every = cfg.reeval_every or 2 * (n + 1)

    def spent():
        return state.n_evals - budget_start

    def update_best(simplex, reevaluated=False):
        v = min(simplex, key=lambda u: u.f)
        # after a re-evaluation the incumbent estimate may rise; trust the simplex
        if v.f < state.best_fom or reevaluated:
            state.best_x = v.x.copy()
            state.best_fom = v.f
            state.best_se = v.se
            state.best_count = len(v.values)
            state.best_superiteration = superiteration
        state.trace.append(state.best_fom)

    def remeasure(v):
        val, s = evaluate(v.x, kind="reeval")
        v.values.append(val)
        v.ses.append(s)

    def confirm(members):
        # never crown a vertex on a single noisy draw
        while True:
            best = min(members, key=lambda u: u.f)
            if len(best.values) > 1:
                return
            remeasure(best)

    def new_vertex(x, simplex=None):
        value, se = evaluate(x)
        v = _Vertex(x, value, se)
        members = [v] if simplex is None else simplex + [v]
        if not cfg.reevaluate or len(members) < 2:
            update_best(members)
            return v
        confirm(members)
        update_best(members)
        if spent() % every == 0:
            remeasure(min(members, key=lambda u: u.f))
            confirm(members)
            update_best(members, reevaluated=True)
        return v

    step = cfg.initial_step if cfg.initial_step is not None else cfg.step_fraction * space.span
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))
    simplex = [new_vertex(x0)]
    for i in range(n):
        x = x0.copy()
        x[i] = x0[i] + step[i]
        if x[i] > space.hi[i] or not space.contains(space.project(x)) or np.allclose(space.project(x), x0):
            x[i] = x0[i] - step[i]
        simplex.append(new_vertex(space.project(x), simplex))

    while True:
        simplex.sort(key=lambda v: v.f)
        fs = np.array([v.f for v in simplex])
        xs = np.array([v.x for v in simplex])
        spread = fs[-1] - fs[0]
        if spread <= cfg.tol_f and (cfg.tol_x is None or np.max(np.abs(xs[1:] - xs[0])) <= cfg.tol_x):
            state.converged = True
            state.reason = "simplex converged"
            break
        if spent() >= cfg.max_evals:
            state.reason = "evaluation budget exhausted"
            break
        state.iterations += 1
        centroid = xs[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = space.project(centroid + cfg.alpha * (centroid - worst.x))
        vr = new_vertex(xr, simplex)
        if vr.f < simplex[0].f:
            xe = space.project(centroid + cfg.gamma * (xr - centroid))
            ve = new_vertex(xe, simplex)
            simplex[-1] = ve if ve.f < vr.f else vr
            continue
        if vr.f < simplex[-2].f:
            simplex[-1] = vr
            continue
        if vr.f < worst.f:
            xc = space.project(centroid + cfg.rho * (xr - centroid))
            vc = new_vertex(xc, simplex)
            if vc.f <= vr.f:
                simplex[-1] = vc
                continue
        else:
            xc = space.project(centroid + cfg.rho * (worst.x - centroid))
            vc = new_vertex(xc, simplex)
            if vc.f < worst.f:
                simplex[-1] = vc
                continue
        best = simplex[0]
        shrunk = [best]
        for v in simplex[1:]:
            shrunk.append(new_vertex(space.project(best.x + cfg.sigma * (v.x - best.x)), shrunk))
        simplex = shrunk
    return state


# --- dCRAB ---------------------------------------------------------------------------------------


@dataclass
class DcrabConfig:
    """Settings for the dCRAB superiteration loop.

    ``coefficient_bound`` caps ``|A_n|`` (default: the restriction's
    ``a_max``); the Nelder-Mead start simplex uses ``step_fraction`` of that
    range.  The loop stops after ``max_superiterations`` or once a
    superiteration improves the best figure of merit by less than
    ``tol_super``.
    """

    restriction: RestrictionPolicy
    n_set: int = 3
    max_superiterations: int = 10
    basis: BasisKind = BasisKind.FOURIER
    superparameter_bounds: tuple | None = None
    sigma: float | None = None
    eps: float = DEFAULT_EPS
    coefficient_bound: float | None = None
    tol_super: float = 1e-3
    min_superiterations: int = 1
    nelder_mead: NelderMeadConfig = field(default_factory=lambda: NelderMeadConfig(max_evals=400))
    seed: int = 0

    def __post_init__(self):
        self.basis = BasisKind(self.basis)
        if self.n_set < 1:
            raise ValueError("n_set must be at least 1")


@dataclass
class DcrabResult:
    state: OptimizerState
    pulse: ControlPulse
    raw: ControlPulse
    superiteration_trace: list
    coefficients: list


def dcrab_optimize(initial: ControlPulse, fom_fn: Callable[[ControlPulse], object], config: DcrabConfig,
                   callback: Callable | None = None) -> DcrabResult:
    """Run dCRAB starting from the raw waveform ``initial``.

    Each superiteration draws a fresh random basis, optimizes its
    coefficients with :func:`nelder_mead` starting from zero, and carries the
    best raw waveform over as the next initial guess.  The restriction is
    applied inside every objective evaluation, so ``fom_fn`` only ever sees
    feasible pulses.  Carrying the raw (pre-restriction) waveform keeps the
    zero-coefficient start of superiteration ``s+1`` identical to the best
    pulse of superiteration ``s``.
    """
    cfg = config
    policy = cfg.restriction
    duration = initial.duration
    sigma = cfg.sigma or default_sigma(duration)
    bounds = cfg.superparameter_bounds or default_bounds(cfg.basis, duration, sigma, cfg.eps)
    coef_bound = cfg.coefficient_bound or policy.a_max
    state = OptimizerState()
    raw_best = initial
    super_trace = []
    coefficients = []
    seeds = np.random.SeedSequence(cfg.seed)

    for s in range(cfg.max_superiterations):
        state.superiteration = s
        rng = np.random.default_rng(seeds.spawn(1)[0])
        elements = sample_basis(cfg.basis, cfg.n_set, bounds, rng, sigma=sigma, eps=cfg.eps)
        expansion = PulseExpansion(raw_best, elements, cfg.eps)
        space = SearchSpace.symmetric(expansion.n_coefficients, coef_bound)

        def objective(a, expansion=expansion):
            return fom_fn(policy.apply(expansion.evaluate(a)))

        before = state.best_fom
        nm_cfg = copy.copy(cfg.nelder_mead)
        nelder_mead(space, objective, np.zeros(space.dim), nm_cfg, callback, state, superiteration=s)
        if state.best_superiteration == s and state.best_x is not None:
            raw_best = expansion.evaluate(state.best_x)
            raw_best.meta.update({"basis": cfg.basis.value, "superiteration": s})
            coefficients.append({"superiteration": s,
                                 "elements": [(e.kind.value, e.superparameter, e.sub_index) for e in elements],
                                 "coefficients": state.best_x.tolist()})
        super_trace.append(state.best_fom)
        log.info("superiteration %d: best FoM %.6g (%d evaluations)", s, state.best_fom, state.n_evals)
        gain = before - state.best_fom
        if s + 1 >= cfg.min_superiterations and s > 0 and gain < cfg.tol_super:
            state.reason = "superiteration gain below tolerance"
            break
    state.converged = True
    return DcrabResult(state, policy.apply(raw_best), raw_best, super_trace, coefficients)


def cutoff_policy(a_max: float) -> RestrictionPolicy:
    return RestrictionPolicy(RestrictionMode.CUT_OFF, a_max)


def bandwidth_policy(a_max: float) -> RestrictionPolicy:
    return RestrictionPolicy(RestrictionMode.BANDWIDTH_LIMITED, a_max)
