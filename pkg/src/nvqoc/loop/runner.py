"""Optimizer client: run logs, manifests, the two optimization steps and post-run scans.

A run directory holds

``manifest.json``
    :class:`RunManifest`; enough to re-execute the run.
``run.ndjson``
    Append-only log.  Each line is one self-contained record with a
    ``record`` field: ``request``, ``response``, ``error`` or ``progress``.
    Lines are flushed and synced as they are written, so a crash can at
    worst leave a truncated final line, which readers skip.
``pulse.txt`` / ``step1.txt`` / ``*-report.txt``
    Results.

Request ids are sequential (``eval-000000``, ...).  Re-running a command
against an existing log replays the logged responses for every id whose
request matches, then continues live; this is how an interrupted run resumes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..model import N14_HYPERFINE_HZ, NvModel
from ..optimize import (
    DcrabConfig,
    NelderMeadConfig,
    ObjectiveFatal,
    OptimizationAborted,
    OptimizerState,
    SearchSpace,
    dcrab_optimize,
    nelder_mead,
)
from ..photophysics import (
    DEFAULT_READOUT,
    DURATION_BOUNDS_NS,
    POWER_BOUNDS_MW,
    WAIT_BOUNDS_NS,
    WINDOW_FRACTION_BOUNDS,
    ReadoutParams,
)
from ..pulses import BasisKind, RestrictionMode, RestrictionPolicy, write_pulse
from ..sensitivity import (
    FitDivergedError,
    SensitivityParams,
    SensitivityReport,
    SensitivityRow,
    eta_podmr,
    eta_ramsey,
    fit_gaussian_dip,
    fit_ramsey,
    measurement_time,
)
from ..spin import TWO_PI, ControlPulse
from . import wire
from .server import ExperimentServer, LoopbackTransport, TransportError
from .wire import EvalKind, EvalRequest, EvalResponse, ErrorResponse

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


class EvaluationError(RuntimeError):
    """The server answered with an error record."""

    def __init__(self, err: ErrorResponse):
        super().__init__(f"{err.code} at {err.field}: {err.message}")
        self.error = err


class RunLogMismatch(ObjectiveFatal):
    """A resumed run issued a request that differs from the logged one."""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def request_digest(req: EvalRequest) -> str:
    body = json.dumps({"kind": EvalKind(req.kind).value, "payload": req.payload, "shots": req.shots},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()


# --- run log -------------------------------------------------------------------------------------


class RunLog:
    """Append-only NDJSON log with one synced write per record."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> list[dict]:
    """All complete records; a truncated or corrupt line is skipped."""
    out = []
    p = Path(path)
    if not p.exists():
        return out
    for line in p.read_text(encoding="utf-8").splitlines():
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            log.warning("skipping unreadable log line in %s", p)
    return out


def logged_responses(records) -> dict:
    """Map request id -> (request digest, EvalResponse) for completed evaluations."""
    digests = {}
    done = {}
    for rec in records:
        kind = rec.get("record")
        if kind == "request":
            digests[rec["id"]] = rec["digest"]
        elif kind == "response" and rec["id"] in digests:
            done[rec["id"]] = (digests[rec["id"]], wire.decode(json.dumps(rec["message"])))
    return done


# --- client --------------------------------------------------------------------------------------


class Client:
    """Issue evaluations with sequential ids, logging and replaying from ``run_log``.

    Parameters
    ----------
    transport : object with ``request(EvalRequest)``
    run_log : RunLog, optional
    cached : dict, optional
        Output of :func:`logged_responses` from a previous attempt.
    retries : int
        Transport-level retries (same id) before giving up.
    """

    def __init__(self, transport, run_log: RunLog | None = None, cached: dict | None = None,
                 retries: int = 3, retry_delay: float = 0.2, prefix: str = "eval"):
        self.transport = transport
        self.run_log = run_log
        self.cached = cached or {}
        self.retries = retries
        self.retry_delay = retry_delay
        self.prefix = prefix
        self.counter = 0
        self.n_replayed = 0
        self.sequence: list[str] = []
        self._replaying = False

    def next_id(self) -> str:
        rid = f"{self.prefix}-{self.counter:06d}"
        self.counter += 1
        return rid

    def evaluate(self, kind: EvalKind, payload: dict, shots: int) -> EvalResponse:
        req = EvalRequest(self.next_id(), EvalKind(kind), payload, int(shots))
        digest = request_digest(req)
        self.sequence.append(digest)
        if req.id in self.cached:
            old_digest, resp = self.cached[req.id]
            if old_digest != digest:
                raise RunLogMismatch(f"request {req.id} differs from the logged one; use a fresh run directory")
            self.n_replayed += 1
            self._replaying = True
            return resp
        self._replaying = False
        if self.run_log:
            self.run_log.append({"record": "request", "id": req.id, "digest": digest,
                                 "message": req.to_dict()})
        resp = self._send(req)
        if self.run_log:
            rec = "error" if isinstance(resp, ErrorResponse) else "response"
            self.run_log.append({"record": rec, "id": req.id, "message": resp.to_dict()})
        if isinstance(resp, ErrorResponse):
            raise EvaluationError(resp)
        if resp.id != req.id:
            raise TransportError(f"response id {resp.id} does not match request {req.id}")
        return resp

    def _send(self, req):
        for attempt in range(self.retries + 1):
            try:
                return self.transport.request(req)
            except TransportError as exc:
                if attempt == self.retries:
                    raise
                log.warning("transport error (%s); retrying %s", exc, req.id)
                time.sleep(self.retry_delay * (attempt + 1))

    def progress(self, record) -> None:
        # progress of a replayed evaluation is already in the log
        if self.run_log and not self._replaying:
            self.run_log.append({"record": "progress", "index": record.index, "kind": record.kind,
                                 "superiteration": record.superiteration, "fom": record.fom,
                                 "fom_se": record.fom_se, "x": np.asarray(record.x).tolist()})


# --- step 1 --------------------------------------------------------------------------------------


READOUT_NAMES = ("laser_power", "laser_duration", "readout_window_fraction", "wait_time")


def readout_space() -> SearchSpace:
    """Step-1 search box over (power, duration, window / duration, wait).

    The readout window bound scales with the laser duration, so searching the
    window as a fraction of the duration turns the coupled bound into a plain
    box and removes the ridge it would otherwise create.
    """
    lo = [POWER_BOUNDS_MW[0], DURATION_BOUNDS_NS[0], WINDOW_FRACTION_BOUNDS[0], WAIT_BOUNDS_NS[0]]
    hi = [POWER_BOUNDS_MW[1], DURATION_BOUNDS_NS[1], WINDOW_FRACTION_BOUNDS[1], WAIT_BOUNDS_NS[1]]
    return SearchSpace(np.array(lo), np.array(hi), READOUT_NAMES)


def readout_from_vector(x) -> ReadoutParams:
    power, duration, fraction, wait = map(float, x)
    return ReadoutParams(power, duration, fraction * duration, wait)


def readout_to_vector(p: ReadoutParams) -> np.ndarray:
    return np.array([p.laser_power, p.laser_duration, p.readout_window / p.laser_duration, p.wait_time])


@dataclass
class Step1Config:
    """Readout optimization settings.

    With ``restarts`` on, Nelder-Mead is restarted from its incumbent each
    time the simplex collapses, until ``max_evals`` is spent; a collapsed
    simplex on a noisy objective is often not at the optimum.
    """

    initial: ReadoutParams = DEFAULT_READOUT
    shots: int = 10_000
    blocks: int = 10
    max_evals: int = 600
    tol_f: float = 1e-3
    step_fraction: float = 0.1
    reevaluate: bool = True
    restarts: bool = True

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["initial"] = self.initial.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Step1Config":
        d = dict(d)
        if "initial" in d:
            d["initial"] = ReadoutParams(**d["initial"])
        return cls(**d)


@dataclass
class Step1Result:
    params: ReadoutParams
    fom: float
    fom_se: float
    initial_fom: float
    contrast: float
    state: OptimizerState


def run_step1(client: Client, cfg: Step1Config) -> Step1Result:
    """Nelder-Mead over laser power, duration, readout window and wait time."""
    space = readout_space()
    contrasts = {}

    def fom_fn(x):
        p = readout_from_vector(x)
        resp = client.evaluate(EvalKind.READOUT_PARAMS, {"params": p.as_dict(), "blocks": cfg.blocks}, cfg.shots)
        contrasts[tuple(x)] = resp.counts["contrast"]
        return resp.fom, resp.fom_se

    state = OptimizerState()
    x0 = readout_to_vector(cfg.initial)
    while state.n_evals < cfg.max_evals:
        nm = NelderMeadConfig(tol_f=cfg.tol_f, max_evals=cfg.max_evals - state.n_evals,
                              step_fraction=cfg.step_fraction, reevaluate=cfg.reevaluate)
        nelder_mead(space, fom_fn, x0, nm, callback=client.progress, state=state)
        if not cfg.restarts:
            break
        x0 = state.best_x
    best = readout_from_vector(state.best_x)
    return Step1Result(best, state.best_fom, state.best_se, state.history[0].fom,
                       contrasts.get(tuple(state.best_x), float("nan")), state)


def step1_report(result: Step1Result, initial: ReadoutParams) -> str:
    """Table of initial guess, bounds and optimized readout parameters."""
    lo_f, hi_f = WINDOW_FRACTION_BOUNDS
    rows = [
        ("laser_power_mW", initial.laser_power, f"[{POWER_BOUNDS_MW[0]:g}, {POWER_BOUNDS_MW[1]:g}]",
         result.params.laser_power),
        ("laser_duration_ns", initial.laser_duration, f"[{DURATION_BOUNDS_NS[0]:g}, {DURATION_BOUNDS_NS[1]:g}]",
         result.params.laser_duration),
        ("readout_window_ns", initial.readout_window, f"[{lo_f:g}, {hi_f:g}] x laser_duration",
         result.params.readout_window),
        ("wait_time_ns", initial.wait_time, f"[{WAIT_BOUNDS_NS[0]:g}, {WAIT_BOUNDS_NS[1]:g}]",
         result.params.wait_time),
    ]
    lines = ["# readout parameter optimization", "# parameter initial bounds optimized"]
    lines += [f"{name} {a:.6g} {b} {c:.6g}" for name, a, b, c in rows]
    lines += [f"# fom_initial {result.initial_fom:.6g}",
              f"# fom_optimized {result.fom:.6g} +- {result.fom_se:.2g}",
              f"# contrast_optimized {result.contrast:.6g}",
              f"# evaluations {result.state.n_evals}"]
    return "\n".join(lines) + "\n"


# --- step 2 --------------------------------------------------------------------------------------


@dataclass
class Step2Config:
    """Pulse optimization settings.  ``target`` is ``"podmr"`` (inversion) or ``"gate"`` ((pi/2)_x)."""

    target: str = "podmr"
    readout: ReadoutParams = DEFAULT_READOUT
    duration_ns: float = 300.0
    rabi_max_hz: float = 10e6
    dt_ns: float | None = None
    scales: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    detuning_hz: float = 0.0
    basis: str = "fourier"
    restriction: str = "bandwidth"
    n_set: int = 4
    max_superiterations: int = 10
    max_evals: int = 400
    tol_f: float = 1e-4
    tol_super: float = 1e-3
    shots: int = 100_000
    reevaluate: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.target not in ("podmr", "gate"):
            raise ValueError("target must be 'podmr' or 'gate'")

    @property
    def rabi_max(self) -> float:
        return TWO_PI * self.rabi_max_hz

    @property
    def dt(self) -> float:
        return self.dt_ns * 1e-9 if self.dt_ns else 0.05 / self.rabi_max

    @property
    def angle(self) -> float:
        return np.pi if self.target == "podmr" else np.pi / 2

    def initial_pulse(self) -> ControlPulse:
        """Rectangular x pulse spread over ``duration_ns`` with the target rotation angle."""
        n = max(1, int(round(self.duration_ns * 1e-9 / self.dt)))
        amp = self.angle / (n * self.dt)
        if amp > self.rabi_max:
            raise ValueError("duration too short for the target rotation at the maximum drive")
        return ControlPulse(np.tile([amp, 0.0], (n, 1)), self.dt, rabi_max=self.rabi_max * (1 + 1e-12))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["readout"] = self.readout.as_dict()
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Step2Config":
        d = dict(d)
        if "readout" in d:
            d["readout"] = ReadoutParams(**d["readout"])
        if "scales" in d:
            d["scales"] = tuple(d["scales"])
        return cls(**d)


@dataclass
class Step2Result:
    pulse: ControlPulse
    raw: ControlPulse
    fom: float
    fom_se: float
    initial_fom: float
    superiteration_trace: list
    state: OptimizerState


def pulse_payload(pulse: ControlPulse, cfg: Step2Config) -> dict:
    return {"pulse": wire.pulse_to_wire(pulse, cfg.rabi_max), "scales": list(cfg.scales),
            "detuning_hz": cfg.detuning_hz, "readout": cfg.readout.as_dict()}


def run_step2(client: Client, cfg: Step2Config) -> Step2Result:
    """dCRAB over the robust pulsed-ODMR or gate-verification figure of merit."""
    kind = EvalKind.PODMR_FOM if cfg.target == "podmr" else EvalKind.RAMSEY_GATE_FOM

    def fom_fn(pulse):
        resp = client.evaluate(kind, pulse_payload(pulse, cfg), cfg.shots)
        return resp.fom, resp.fom_se

    policy = RestrictionPolicy(RestrictionMode(cfg.restriction), cfg.rabi_max)
    dc = DcrabConfig(
        restriction=policy,
        n_set=cfg.n_set,
        max_superiterations=cfg.max_superiterations,
        basis=BasisKind(cfg.basis),
        coefficient_bound=cfg.rabi_max,
        tol_super=cfg.tol_super,
        nelder_mead=NelderMeadConfig(tol_f=cfg.tol_f, max_evals=cfg.max_evals, reevaluate=cfg.reevaluate),
        seed=cfg.seed,
    )
    initial = cfg.initial_pulse()
    res = dcrab_optimize(initial, fom_fn, dc, callback=client.progress)
    st = res.state
    return Step2Result(res.pulse, res.raw, st.best_fom, st.best_se, st.history[0].fom,
                       res.superiteration_trace, st)


# --- scans and sensitivity reports ---------------------------------------------------------------


@dataclass
class ScanConfig:
    """Post-run robustness scans.

    ``amplitude`` scans fit a dip (pulsed ODMR) or a fringe (gate) per scale;
    ``detuning`` scans fit a fringe per drive detuning.
    """

    scales: tuple = (0.2, 0.4, 0.6, 0.8, 1.0)
    spectrum_hz: tuple = tuple(np.linspace(-6e6, 6e6, 41))
    detunings_hz: tuple = (0.0, 2e6, 4e6, 6e6, 8e6, 10e6)
    taus_s: tuple = tuple(np.linspace(0.0, 3e-6, 121))
    hyperfine_offsets_hz: tuple = (-N14_HYPERFINE_HZ, 0.0, N14_HYPERFINE_HZ)
    fringe_detuning_hz: float = 5e6
    shots: int = 100_000

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScanConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _sens_params(readout: ReadoutParams, pi_time: float, counts_per_shot: float) -> SensitivityParams:
    t_m = measurement_time(readout.wait_time * 1e-9, readout.laser_duration * 1e-9)
    return SensitivityParams(measurement_time=t_m, init_time=readout.laser_duration * 1e-9,
                             pi_time=pi_time, counts_per_shot=counts_per_shot)


def _podmr_rows(request: dict, response: dict) -> list:
    payload = request["payload"]
    counts = response["counts"]
    f = np.asarray(payload["detunings_hz"])
    readout = ReadoutParams(**payload["readout"])
    pulse = wire.pulse_from_wire(payload["pulse"])
    params = _sens_params(readout, pulse.duration, counts["counts_per_shot"])
    shots = counts["shots"]
    rows = []
    for scale, n_ph in zip(counts["scales"], counts["n_ph"]):
        n_ph = np.asarray(n_ph)
        # ratio of two Poisson totals with mean ~ R * shots each
        sigma = np.maximum(n_ph, 1e-3) * np.sqrt(2.0 / (counts["counts_per_shot"] * shots))
        try:
            fit = fit_gaussian_dip(f, n_ph, sigma)
            eta = eta_podmr(fit, params) if fit.contrast > 0 else float("nan")
            rows.append(SensitivityRow(scale, fit.contrast, fit.fwhm, eta, fit.stderr["contrast"], fit.fwhm_se))
        except (FitDivergedError, ValueError) as exc:
            log.warning("dip fit failed at scale %g: %s", scale, exc)
            rows.append(SensitivityRow(scale, float("nan"), float("nan"), float("nan")))
    return rows


def _ramsey_row(point: float, request: dict, response: dict, offsets_hz) -> SensitivityRow:
    payload = request["payload"]
    counts = response["counts"]
    readout = ReadoutParams(**payload["readout"])
    pulse = wire.pulse_from_wire(payload["pulse"])
    params = _sens_params(readout, 2 * pulse.duration, counts["counts_per_shot"])
    priors = [payload["detuning_hz"] + o for o in offsets_hz]
    sigma = np.maximum(np.asarray(counts["n_ph_se"]), 1e-12) if counts["n_ph_se"][0] > 0 else None
    try:
        fit = fit_ramsey(counts["taus_s"], counts["n_ph"], priors, sigma)
        eta = eta_ramsey(fit, params) if fit.contrast > 0 else float("nan")
        return SensitivityRow(point, fit.contrast, fit.t2_star, eta, fit.stderr["contrast"], fit.stderr["t2_star"])
    except (FitDivergedError, ValueError) as exc:
        log.warning("fringe fit failed at %g: %s", point, exc)
        return SensitivityRow(point, float("nan"), float("nan"), float("nan"))


def _pairs(records, kind: EvalKind):
    reqs = {r["id"]: r["message"] for r in records if r.get("record") == "request"}
    for r in records:
        if r.get("record") == "response" and reqs.get(r["id"], {}).get("kind") == kind.value:
            yield reqs[r["id"]], r["message"]


def reports_from_log(records, offsets_hz=(-N14_HYPERFINE_HZ, 0.0, N14_HYPERFINE_HZ)) -> list:
    """Rebuild sensitivity reports from the spectrum and fringe records of a scan log."""
    reports = []
    spectra = list(_pairs(records, EvalKind.SPECTRUM))
    if spectra:
        req, resp = spectra[-1]
        rows = _podmr_rows(req, resp)
        n = resp["counts"]
        params = _sens_params(ReadoutParams(**req["payload"]["readout"]),
                              wire.pulse_from_wire(req["payload"]["pulse"]).duration, n["counts_per_shot"])
        reports.append(SensitivityReport("podmr-amplitude", "scale", "fwhm_hz", rows, params))
    fringes = list(_pairs(records, EvalKind.FRINGE))
    by_tag = {}
    for req, resp in fringes:
        tag = req["payload"].get("tag", "fringe")
        by_tag.setdefault(tag, []).append((req, resp))
    for tag, items in by_tag.items():
        point_key = "amplitude_scale" if tag == "ramsey-amplitude" else "detuning_hz"
        rows = [_ramsey_row(req["payload"].get(point_key, 1.0), req, resp, offsets_hz) for req, resp in items]
        req, resp = items[-1]
        params = _sens_params(ReadoutParams(**req["payload"]["readout"]),
                              2 * wire.pulse_from_wire(req["payload"]["pulse"]).duration,
                              resp["counts"]["counts_per_shot"])
        label = "scale" if point_key == "amplitude_scale" else "detuning_hz"
        reports.append(SensitivityReport(tag, label, "t2_star_s", rows, params))
    return reports


def run_scans(client: Client, pulse: ControlPulse, target: str, readout: ReadoutParams, cfg: ScanConfig,
              rabi_max: float) -> list:
    """Robustness scans of an optimized pulse; returns sensitivity reports.

    Pulsed ODMR: one spectrum over ``spectrum_hz`` at every scale.  Gate: a
    fringe at every scale (at ``fringe_detuning_hz``) and a fringe at every
    detuning in ``detunings_hz`` (full amplitude).
    """
    records = []

    def ask(kind, payload):
        resp = client.evaluate(kind, payload, cfg.shots)
        req_id = f"scan-{len(records)}"
        records.append({"record": "request", "id": req_id, "message": {"kind": kind.value, "payload": payload}})
        records.append({"record": "response", "id": req_id, "message": resp.to_dict()})

    base = {"pulse": wire.pulse_to_wire(pulse, rabi_max), "readout": readout.as_dict()}
    if target == "podmr":
        ask(EvalKind.SPECTRUM, {**base, "scales": list(cfg.scales), "detunings_hz": list(cfg.spectrum_hz)})
    else:
        for s in cfg.scales:
            ask(EvalKind.FRINGE, {**base, "taus_s": list(cfg.taus_s), "detuning_hz": cfg.fringe_detuning_hz,
                                  "amplitude_scale": s, "tag": "ramsey-amplitude"})
        for d in cfg.detunings_hz:
            ask(EvalKind.FRINGE, {**base, "taus_s": list(cfg.taus_s), "detuning_hz": d,
                                  "amplitude_scale": 1.0, "tag": "ramsey-detuning"})
    return reports_from_log(records, cfg.hyperfine_offsets_hz)


# --- manifests and run orchestration -------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to re-execute a run."""

    command: str
    master_seed: int
    model: dict
    settings: dict
    noiseless: bool = False
    protocol_version: int = wire.PROTOCOL_VERSION
    manifest_version: int = MANIFEST_VERSION
    started: str = ""
    finished: str = ""
    summary: dict = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("manifest_version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('manifest_version')}")
        return cls(**d)


@dataclass
class RunOutcome:
    manifest: RunManifest
    result: object
    client: Client
    directory: Path


def execute(manifest: RunManifest, out_dir, transport=None) -> RunOutcome:
    """Run ``manifest.command`` (``step1``, ``step2`` or ``scan``) into ``out_dir``.

    Without ``transport`` an in-process server is built from the manifest's
    model, seed and noise setting.  An existing log in ``out_dir`` is
    replayed first, so calling this again after a crash resumes the run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = NvModel.from_config(manifest.model)
    if transport is None:
        transport = LoopbackTransport(ExperimentServer(model, manifest.master_seed, manifest.noiseless))
    log_path = out / "run.ndjson"
    cached = logged_responses(read_log(log_path))
    previous = out / "manifest.json"
    if cached and previous.exists():
        old = RunManifest.load(previous)
        def key(m):
            return json.dumps([m.command, m.master_seed, m.model, m.settings, m.noiseless], sort_keys=True,
                              default=float)

        same = key(old) == key(manifest)
        if not same:
            raise RunLogMismatch(f"{out} holds a run with different settings; use a fresh run directory")
        manifest.started = manifest.started or old.started
    if not manifest.started:
        manifest.started = _now()
    manifest.save(out / "manifest.json")
    with RunLog(log_path) as run_log:
        client = Client(transport, run_log, cached)
        s = manifest.settings
        if manifest.command == "step1":
            cfg = Step1Config.from_dict(s.get("step1", {}))
            result = run_step1(client, cfg)
            (out / "step1.txt").write_text(step1_report(result, cfg.initial), encoding="utf-8")
            manifest.summary = {"fom": result.fom, "fom_se": result.fom_se, "params": result.params.as_dict(),
                                "evaluations": result.state.n_evals}
        elif manifest.command == "step2":
            cfg = Step2Config.from_dict(s.get("step2", {}))
            result = run_step2(client, cfg)
            write_pulse(out / "pulse.txt", result.pulse, cfg.rabi_max)
            np.savetxt(out / "fom-trace.txt", np.asarray(result.state.trace), header="best FoM per evaluation")
            manifest.summary = {"fom": result.fom, "fom_se": result.fom_se, "initial_fom": result.initial_fom,
                                "superiteration_trace": result.superiteration_trace,
                                "evaluations": result.state.n_evals}
            if s.get("scan") is not None:
                reports = run_scans(client, result.pulse, cfg.target, cfg.readout,
                                    ScanConfig.from_dict(s["scan"]), cfg.rabi_max)
                for rep in reports:
                    rep.write(out / f"{rep.kind}-report.txt")
        elif manifest.command == "scan":
            cfg = Step2Config.from_dict(s.get("step2", {}))
            pulse = wire.pulse_from_wire(s["pulse"])
            result = run_scans(client, pulse, cfg.target, cfg.readout, ScanConfig.from_dict(s.get("scan", {})),
                               cfg.rabi_max)
            for rep in result:
                rep.write(out / f"{rep.kind}-report.txt")
            manifest.summary = {"reports": [r.kind for r in result]}
        else:
            raise ValueError(f"unknown command {manifest.command!r}")
    manifest.summary["replayed_evaluations"] = client.n_replayed
    manifest.summary["sequence_digest"] = hashlib.sha256("".join(client.sequence).encode()).hexdigest()
    manifest.finished = _now()
    manifest.save(out / "manifest.json")
    return RunOutcome(manifest, result, client, out)


@dataclass(frozen=True)
class ReplayReport:
    original_fom: float | None
    replayed_fom: float | None
    same_fom: bool
    same_sequence: bool
    n_evaluations: int


def replay(manifest_path, out_dir) -> ReplayReport:
    """Re-execute a finished run from its manifest in a fresh directory and compare."""
    original = RunManifest.load(manifest_path)
    fresh = RunManifest(original.command, original.master_seed, original.model, original.settings,
                        original.noiseless)
    if Path(out_dir, "run.ndjson").exists():
        raise FileExistsError(f"{out_dir} already holds a run log; replay needs a fresh directory")
    outcome = execute(fresh, out_dir)
    a = original.summary.get("fom")
    b = outcome.manifest.summary.get("fom")
    return ReplayReport(a, b, a == b, original.summary.get("sequence_digest") == outcome.manifest.summary.get(
        "sequence_digest"), len(outcome.client.sequence))


__all__ = [
    "Client",
    "EvaluationError",
    "OptimizationAborted",
    "ReplayReport",
    "RunLog",
    "RunLogMismatch",
    "RunManifest",
    "ScanConfig",
    "Step1Config",
    "Step2Config",
    "execute",
    "logged_responses",
    "read_log",
    "readout_from_vector",
    "readout_space",
    "readout_to_vector",
    "replay",
    "reports_from_log",
    "run_scans",
    "run_step1",
    "run_step2",
    "step1_report",
]
