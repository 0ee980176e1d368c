"""Simulated experiment behind the wire protocol.

:class:`ExperimentServer` turns one :class:`EvalRequest` into one response
using an :class:`NvModel`.  Evaluations are serialized by a lock, as on a real
setup.  Photon-count noise for a request is drawn from a generator seeded by
hashing ``(master_seed, request id)``, so an identical request yields an
identical response regardless of what was evaluated before it.
"""

from __future__ import annotations

import hashlib
import logging
import socket
import socketserver
import threading
import time

import numpy as np

from ..model import NvModel
from ..photophysics import ZeroCountsError, fom_readout, simulate_readout
from ..protocols import AmplitudeScan, gate_verification_fom, podmr_fom, podmr_spectrum, ramsey_fringe
from ..spin import TWO_PI, InvalidPulseError
from . import wire
from .wire import EvalKind, EvalRequest, EvalResponse, ErrorResponse, ProtocolError

log = logging.getLogger(__name__)


def derive_seed(master_seed: int, request_id: str) -> int:
    """64-bit seed from the master seed and a request id."""
    h = hashlib.sha256(f"{int(master_seed)}:{request_id}".encode()).digest()
    return int.from_bytes(h[:8], "little")


class ExperimentServer:
    """Evaluate requests against ``model``.

    Parameters
    ----------
    model : NvModel
    master_seed : int
    noiseless : bool
        Return expected counts instead of Poisson draws.
    """

    def __init__(self, model: NvModel, master_seed: int = 0, noiseless: bool = False):
        self.model = model
        self.master_seed = int(master_seed)
        self.noiseless = noiseless
        self._lock = threading.Lock()
        self.n_handled = 0

    # --- entry points ----------------------------------------------------------------------------

    def handle_line(self, line: str) -> str:
        try:
            msg = wire.decode(line)
        except ProtocolError as exc:
            return wire.encode(ErrorResponse(exc.request_id, exc.code, exc.field, exc.message))
        if not isinstance(msg, EvalRequest):
            return wire.encode(ErrorResponse(getattr(msg, "id", None), "bad-value", "type",
                                             "server only accepts eval_request messages"))
        return wire.encode(self.handle(msg))

    def handle(self, request: EvalRequest):
        with self._lock:
            start = time.perf_counter()
            try:
                fom, se, counts = self._evaluate(request)
            except ProtocolError as exc:
                return ErrorResponse(request.id, exc.code, exc.field, exc.message)
            except (InvalidPulseError, ZeroCountsError, ValueError) as exc:
                return ErrorResponse(request.id, "evaluation-failed", "payload", str(exc))
            self.n_handled += 1
            return EvalResponse(request.id, fom, se, counts, time.perf_counter() - start)

    # --- evaluation ------------------------------------------------------------------------------

    def _evaluate(self, req: EvalRequest):
        seed = derive_seed(self.master_seed, req.id)
        p = req.payload
        if req.kind is EvalKind.READOUT_PARAMS:
            return self._readout(p, req.shots, seed)
        path = "payload."
        readout = wire.readout_from_wire(wire._get(p, "readout", path, dict), "payload.readout.")
        pulse = wire.pulse_from_wire(wire._get(p, "pulse", path, dict), rabi_max=self.model.rabi_max)
        noiseless = self.noiseless
        if req.kind in (EvalKind.PODMR_FOM, EvalKind.RAMSEY_GATE_FOM):
            scan = AmplitudeScan(tuple(wire.float_list(p, "scales", path, 0.0, 1.0, lo_open=True)))
            det = TWO_PI * wire.number(p, "detuning_hz", path)
            fn = podmr_fom if req.kind is EvalKind.PODMR_FOM else gate_verification_fom
            res = fn(pulse, scan, det, self.model, readout, req.shots, seed, noiseless)
            counts = {"scales": list(res.scales.tolist()), "a": res.counts_a.tolist(), "b": res.counts_b.tolist(),
                      "contrasts": res.contrasts.tolist(), "shots": req.shots}
            return res.fom, res.fom_se, counts
        if req.kind is EvalKind.SPECTRUM:
            scan = AmplitudeScan(tuple(wire.float_list(p, "scales", path, 0.0, 1.0, lo_open=True)))
            det = TWO_PI * wire.float_list(p, "detunings_hz", path)
            n_ph = podmr_spectrum(pulse, scan, det, self.model, readout, req.shots, seed, noiseless)
            ref = self.model.readout_source.expected_counts(readout, 0.0, 0.0)
            # report the mean normalized count as a scalar; the spectrum itself is in counts
            return float(np.mean(n_ph)), 0.0, {"scales": list(scan.scales), "n_ph": n_ph.tolist(),
                                               "counts_per_shot": float(ref[0]), "shots": req.shots}
        if req.kind is EvalKind.FRINGE:
            taus = wire.float_list(p, "taus_s", path, 0.0)
            det = TWO_PI * wire.number(p, "detuning_hz", path)
            scale = wire.number(p, "amplitude_scale", path, default=1.0)
            if not 0 < scale <= 1:
                raise ProtocolError("bad-value", "payload.amplitude_scale", "must lie in (0, 1]")
            fr = ramsey_fringe(pulse, taus, det, self.model, readout, req.shots, seed, noiseless, scale)
            vis = float((fr.n_ph.max() - fr.n_ph.min()) / (fr.n_ph.max() + fr.n_ph.min()))
            return 1.0 - vis, 0.0, {"taus_s": fr.taus.tolist(), "n_ph": fr.n_ph.tolist(),
                                    "n_ph_se": fr.n_ph_se.tolist(),
                                    "counts_per_shot": float(np.mean(fr.reference_counts) / req.shots),
                                    "shots": req.shots}
        raise ProtocolError("bad-value", "kind", f"unsupported kind {req.kind}")

    def _readout(self, p, shots, seed):
        params = wire.readout_from_wire(wire._get(p, "params", "payload.", dict))
        blocks = int(p.get("blocks", 10))
        if blocks < 2 or blocks > shots:
            raise ProtocolError("bad-value", "payload.blocks", "need 2 <= blocks <= shots")
        counts = simulate_readout(self.model.readout_source, params, shots, np.random.default_rng(seed),
                                  blocks=blocks, noiseless=self.noiseless)
        r0, r1, s0, s1 = counts.totals
        fom = fom_readout(counts)
        c = (r0 - r1) / (r0 + r1)
        # shot-noise error of the contrast term, which dominates the FoM uncertainty
        se = 0.0 if self.noiseless else float(np.sqrt(4 * r0 * r1 / (r0 + r1) ** 3))
        return fom, se, {"r0": float(r0), "r1": float(r1), "s0": float(s0), "s1": float(s1),
                         "contrast": float(c), "shots": counts.repetitions}


# --- transports ----------------------------------------------------------------------------------


class TransportError(ConnectionError):
    """The server could not be reached or closed the connection."""


class LoopbackTransport:
    """In-process transport that still goes through the wire encoding."""

    def __init__(self, server: ExperimentServer):
        self.server = server

    def request(self, req: EvalRequest):
        return wire.decode(self.server.handle_line(wire.encode(req)))

    def close(self):
        pass


class TcpTransport:
    """Newline-delimited messages over one persistent TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 300.0):
        self.address = (host, int(port))
        self.timeout = timeout
        self._sock = None
        self._file = None

    def _connect(self):
        try:
            self._sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach {self.address}: {exc}") from exc
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")

    def request(self, req: EvalRequest):
        if self._file is None:
            self._connect()
        try:
            self._file.write(wire.encode(req) + "\n")
            self._file.flush()
            line = self._file.readline()
        except OSError as exc:
            self.close()
            raise TransportError(str(exc)) from exc
        if not line:
            self.close()
            raise TransportError("server closed the connection")
        return wire.decode(line)

    def close(self):
        for obj in (self._file, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        self._file = self._sock = None


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            reply = self.server.experiment.handle_line(line)
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class _TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def make_tcp_server(experiment: ExperimentServer, host: str = "127.0.0.1", port: int = 0) -> _TcpServer:
    """Bind a TCP server; ``port=0`` picks a free port (see ``server_address``)."""
    srv = _TcpServer((host, port), _Handler)
    srv.experiment = experiment
    return srv


def serve(model: NvModel, host: str = "127.0.0.1", port: int = 7341, master_seed: int = 0,
          noiseless: bool = False) -> None:
    """Run the experiment server until interrupted."""
    srv = make_tcp_server(ExperimentServer(model, master_seed, noiseless), host, port)
    log.info("serving on %s:%d", *srv.server_address[:2])
    try:
        srv.serve_forever()
    finally:
        srv.server_close()
