"""Command line: ``python -m nvqoc <verb>``.

Verbs
-----
serve    run the simulated experiment server over TCP
step1    optimize readout parameters
step2    optimize a robust pulse with dCRAB (optionally followed by scans)
scan     robustness and detuning scans of an existing pulse file
report   rebuild sensitivity tables from a scan log
replay   re-execute a run from its manifest and compare

Settings come from an optional JSON config file (keys ``step1``, ``step2``,
``scan``) and are overridden by flags.  Without ``--connect`` the client
talks to an in-process server built from ``--model``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..model import NvModel, load_model
from ..pulses import read_pulse
from ..spin import TWO_PI
from . import wire
from .runner import (
    RunManifest,
    ScanConfig,
    Step1Config,
    Step2Config,
    execute,
    read_log,
    replay,
    reports_from_log,
)
from .server import TcpTransport, serve


def _model(args) -> NvModel:
    return load_model(args.model) if args.model else NvModel()


def _settings(args) -> dict:
    return json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}


def _transport(args):
    if not args.connect:
        return None
    host, _, port = args.connect.rpartition(":")
    return TcpTransport(host or "127.0.0.1", int(port))


def _common(p):
    p.add_argument("--model", help="NvModel JSON config (default: built-in model)")
    p.add_argument("--config", help="JSON settings with step1/step2/scan sections")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--shots", type=int, help="shot budget N per evaluation")
    p.add_argument("--noiseless", action="store_true", help="expected counts instead of Poisson draws")
    p.add_argument("--connect", metavar="HOST:PORT", help="use a TCP server instead of the in-process one")
    p.add_argument("--out", required=True, help="run directory")


def _run(args, command, settings):
    manifest = RunManifest(command, args.seed, _model(args).to_config(), settings, args.noiseless)
    outcome = execute(manifest, args.out, _transport(args))
    print(json.dumps(outcome.manifest.summary, indent=2, default=float))
    return 0


def cmd_serve(args):
    serve(_model(args), args.host, args.port, args.seed, args.noiseless)
    return 0


def cmd_step1(args):
    s = _settings(args)
    s1 = dict(s.get("step1", {}))
    if args.shots:
        s1["shots"] = args.shots
    if args.max_evals:
        s1["max_evals"] = args.max_evals
    s["step1"] = Step1Config.from_dict(s1).to_dict()
    return _run(args, "step1", s)


def cmd_step2(args):
    s = _settings(args)
    s2 = dict(s.get("step2", {}))
    for key in ("target", "basis", "restriction", "duration_ns", "n_set", "max_superiterations", "shots"):
        v = getattr(args, key, None)
        if v is not None:
            s2[key] = v
    if args.step1:
        s2["readout"] = json.loads(Path(args.step1).read_text(encoding="utf-8"))["summary"]["params"]
    s["step2"] = Step2Config.from_dict(s2).to_dict()
    if args.scan:
        s["scan"] = ScanConfig.from_dict(s.get("scan", {})).to_dict()
    return _run(args, "step2", s)


def cmd_scan(args):
    s = _settings(args)
    s2 = Step2Config.from_dict(dict(s.get("step2", {}), **({"target": args.target} if args.target else {})))
    pulse = read_pulse(args.pulse)
    s["step2"] = s2.to_dict()
    sc = dict(s.get("scan", {}))
    if args.shots:
        sc["shots"] = args.shots
    s["scan"] = ScanConfig.from_dict(sc).to_dict()
    s["pulse"] = wire.pulse_to_wire(pulse, TWO_PI * s2.rabi_max_hz)
    return _run(args, "scan", s)


def cmd_report(args):
    records = read_log(Path(args.run) / "run.ndjson")
    reports = reports_from_log(records)
    if not reports:
        print("no spectrum or fringe records in this run", file=sys.stderr)
        return 1
    for rep in reports:
        text = rep.to_text()
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            rep.write(Path(args.out) / f"{rep.kind}-report.txt")
        print(text)
    return 0


def cmd_replay(args):
    rep = replay(Path(args.run) / "manifest.json", args.out)
    print(json.dumps(rep.__dict__, indent=2, default=float))
    return 0 if rep.same_fom and rep.same_sequence else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvqoc", description="Closed-loop optimal control of a simulated NV centre.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("serve", help="run the experiment server")
    p.add_argument("--model")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7341)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("step1", help="optimize readout parameters")
    _common(p)
    p.add_argument("--max-evals", type=int)
    p.set_defaults(fn=cmd_step1)

    p = sub.add_parser("step2", help="optimize a robust pulse")
    _common(p)
    p.add_argument("--target", choices=("podmr", "gate"))
    p.add_argument("--basis", choices=("fourier", "sigmoid"))
    p.add_argument("--restriction", choices=("cutoff", "bandwidth"))
    p.add_argument("--duration-ns", type=float)
    p.add_argument("--n-set", type=int)
    p.add_argument("--max-superiterations", type=int)
    p.add_argument("--step1", help="manifest.json of a step-1 run supplying readout parameters")
    p.add_argument("--scan", action="store_true", help="run robustness scans afterwards")
    p.set_defaults(fn=cmd_step2)

    p = sub.add_parser("scan", help="robustness scans of a pulse file")
    _common(p)
    p.add_argument("--pulse", required=True)
    p.add_argument("--target", choices=("podmr", "gate"))
    p.set_defaults(fn=cmd_scan)

    p = sub.add_parser("report", help="sensitivity tables from a scan run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--out", help="directory for report files")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("replay", help="re-execute a run from its manifest")
    p.add_argument("--run", required=True, help="run directory holding manifest.json")
    p.add_argument("--out", required=True, help="fresh directory for the replay")
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)
