"""Line-delimited JSON messages between the optimizer client and the experiment server.

Every message is one JSON object on one line with a ``type`` and the protocol
version ``v``.  Floats are written with ``repr`` precision, so a value
survives a round trip exactly.

``eval_request``
    ``id`` (str, unique per session), ``kind`` (one of :class:`EvalKind`),
    ``payload`` (object, schema per kind below), ``shots`` (int >= 1).
``eval_response``
    ``id``, ``fom`` (float), ``fom_se`` (float >= 0), ``counts`` (object or
    null), ``server_time`` (seconds spent evaluating).
``error``
    ``id`` (null when the request could not be parsed), ``error``:
    ``{code, field, message}``.  ``field`` is a dotted path such as
    ``payload.params.laser_power``.

Payloads by kind (frequencies in Hz, times in seconds unless noted):

``readout-params``
    ``params``: ``{laser_power [mW], laser_duration [ns], readout_window [ns],
    wait_time [ns]}``; optional ``blocks`` (int >= 2).
``podmr-fom`` / ``ramsey-gate-fom``
    ``pulse`` (see :func:`pulse_to_wire`), ``scales`` (list in (0, 1]),
    ``detuning_hz``, ``readout`` (params object as above).
``spectrum``
    ``pulse``, ``scales``, ``detunings_hz`` (list), ``readout``.
``fringe``
    ``pulse`` (the pi/2 pulse), ``taus_s`` (list >= 0), ``detuning_hz``,
    ``readout``, optional ``amplitude_scale`` (default 1).

Unknown payload keys are ignored; clients use a ``tag`` key to label scans.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from ..photophysics import ReadoutParams
from ..spin import ControlPulse

PROTOCOL_VERSION = 1


class EvalKind(str, enum.Enum):
    READOUT_PARAMS = "readout-params"
    PODMR_FOM = "podmr-fom"
    RAMSEY_GATE_FOM = "ramsey-gate-fom"
    SPECTRUM = "spectrum"
    FRINGE = "fringe"


class ProtocolError(ValueError):
    """A message violates the schema; ``field`` names the offending entry."""

    def __init__(self, code: str, field: str, message: str, request_id=None):
        super().__init__(f"{code} at {field}: {message}")
        self.code = code
        self.field = field
        self.message = message
        self.request_id = request_id


@dataclass(frozen=True)
class EvalRequest:
    id: str
    kind: EvalKind
    payload: dict
    shots: int

    def to_dict(self) -> dict:
        return {"type": "eval_request", "v": PROTOCOL_VERSION, "id": self.id,
                "kind": EvalKind(self.kind).value, "payload": self.payload, "shots": self.shots}


@dataclass(frozen=True)
class EvalResponse:
    id: str
    fom: float
    fom_se: float
    counts: dict | None = None
    server_time: float = 0.0

    def to_dict(self) -> dict:
        return {"type": "eval_response", "v": PROTOCOL_VERSION, "id": self.id, "fom": self.fom,
                "fom_se": self.fom_se, "counts": self.counts, "server_time": self.server_time}


@dataclass(frozen=True)
class ErrorResponse:
    id: str | None
    code: str
    field: str
    message: str

    def to_dict(self) -> dict:
        return {"type": "error", "v": PROTOCOL_VERSION, "id": self.id,
                "error": {"code": self.code, "field": self.field, "message": self.message}}


def encode(msg) -> str:
    """One line of JSON, no trailing newline."""
    return json.dumps(msg.to_dict(), separators=(",", ":"), allow_nan=True)


def _get(obj, key, path, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        raise ProtocolError("missing-field", f"{path}{key}", "required field is missing")
    value = obj[key]
    if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ProtocolError("bad-type", f"{path}{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def decode(line: str):
    """Parse one line into :class:`EvalRequest`, :class:`EvalResponse` or :class:`ErrorResponse`."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError("malformed-json", "", str(exc)) from exc
    if not isinstance(obj, dict):
        raise ProtocolError("bad-type", "", "message must be a JSON object")
    mtype = _get(obj, "type", "", str)
    version = _get(obj, "v", "", int)
    rid = obj.get("id")
    if version != PROTOCOL_VERSION:
        raise ProtocolError("bad-version", "v", f"unsupported protocol version {version}", rid)
    if mtype == "eval_request":
        rid = _get(obj, "id", "", str)
        try:
            kind = EvalKind(_get(obj, "kind", "", str))
        except ValueError as exc:
            raise ProtocolError("bad-value", "kind", f"unknown evaluation kind {obj['kind']!r}", rid) from exc
        payload = _get(obj, "payload", "", dict)
        shots = _get(obj, "shots", "", int)
        if shots < 1:
            raise ProtocolError("bad-value", "shots", "shot budget must be at least 1", rid)
        return EvalRequest(rid, kind, payload, shots)
    if mtype == "eval_response":
        fom = _get(obj, "fom", "", (int, float))
        se = _get(obj, "fom_se", "", (int, float))
        if se < 0:
            raise ProtocolError("bad-value", "fom_se", "standard error must be non-negative", rid)
        return EvalResponse(_get(obj, "id", "", str), float(fom), float(se), obj.get("counts"),
                            float(obj.get("server_time", 0.0)))
    if mtype == "error":
        err = _get(obj, "error", "", dict)
        return ErrorResponse(rid, str(err.get("code", "")), str(err.get("field", "")), str(err.get("message", "")))
    raise ProtocolError("bad-value", "type", f"unknown message type {mtype!r}", rid)


# --- payload helpers -----------------------------------------------------------------------------


def pulse_to_wire(pulse: ControlPulse, rabi_max: float) -> dict:
    """Samples as fractions of ``rabi_max`` at full float precision."""
    frac = np.asarray(pulse.samples) / rabi_max
    return {"dt_s": float(pulse.dt), "rabi_max": float(rabi_max),
            "u1": [float(x) for x in frac[:, 0]], "u2": [float(x) for x in frac[:, 1]]}


def pulse_from_wire(obj, path: str = "payload.pulse.", rabi_max: float | None = None) -> ControlPulse:
    dt = _get(obj, "dt_s", path, (int, float))
    ref = _get(obj, "rabi_max", path, (int, float))
    u1 = _get(obj, "u1", path, list)
    u2 = _get(obj, "u2", path, list)
    if not dt > 0:
        raise ProtocolError("bad-value", f"{path}dt_s", "sample step must be positive")
    if not ref > 0:
        raise ProtocolError("bad-value", f"{path}rabi_max", "reference amplitude must be positive")
    if len(u1) != len(u2) or not u1:
        raise ProtocolError("bad-value", f"{path}u1", "channels must be non-empty and of equal length")
    try:
        samples = np.column_stack([np.asarray(u1, dtype=float), np.asarray(u2, dtype=float)]) * ref
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad-type", f"{path}u1", "samples must be numbers") from exc
    if not np.all(np.isfinite(samples)):
        raise ProtocolError("bad-value", f"{path}u1", "samples must be finite")
    limit = ref if rabi_max is None else rabi_max
    if np.max(np.hypot(samples[:, 0], samples[:, 1])) > limit * (1 + 1e-9):
        raise ProtocolError("out-of-bounds", f"{path}u1", "drive amplitude exceeds the maximum Rabi frequency")
    return ControlPulse(samples, float(dt), rabi_max=limit * (1 + 1e-9))


def readout_to_wire(params: ReadoutParams) -> dict:
    return params.as_dict()


def readout_from_wire(obj, path: str = "payload.params.") -> ReadoutParams:
    values = {}
    for key in ("laser_power", "laser_duration", "readout_window", "wait_time"):
        v = _get(obj, key, path, (int, float))
        if not math.isfinite(v):
            raise ProtocolError("bad-value", f"{path}{key}", "must be finite")
        values[key] = float(v)
    params = ReadoutParams(**values)
    bad = params.violations()
    if bad:
        raise ProtocolError("out-of-bounds", f"{path}{bad[0]}", f"outside the allowed range: {', '.join(bad)}")
    return params


def float_list(obj, key, path, lo=-math.inf, hi=math.inf, lo_open=False) -> np.ndarray:
    values = _get(obj, key, path, list)
    if not values:
        raise ProtocolError("bad-value", f"{path}{key}", "list must be non-empty")
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad-type", f"{path}{key}", "entries must be numbers") from exc
    below = arr <= lo if lo_open else arr < lo
    if arr.ndim != 1 or np.any(~np.isfinite(arr)) or np.any(below) or np.any(arr > hi):
        raise ProtocolError("bad-value", f"{path}{key}", f"entries must be finite and within [{lo}, {hi}]")
    return arr


def number(obj, key, path, default=None) -> float:
    if default is not None and key not in obj:
        return float(default)
    v = _get(obj, key, path, (int, float))
    if not math.isfinite(v):
        raise ProtocolError("bad-value", f"{path}{key}", "must be finite")
    return float(v)
