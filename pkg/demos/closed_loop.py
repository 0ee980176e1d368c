"""The full two-step loop on the simulated setup, through the run directory API.

1. Readout parameters are optimized against a planted-optimum readout model.
2. A robust inversion pulse is optimized with those parameters.
3. Robustness scans produce a pulsed-ODMR sensitivity report.

Everything goes through the same NDJSON request/response protocol a remote
setup would see; the run directories under ``runs/`` can be inspected,
reported on (``python -m nvqoc report``) or replayed.  Budgets are kept
small so this finishes in well under a minute.
"""

from pathlib import Path

import numpy as np

from nvqoc.loop.runner import RunManifest, ScanConfig, Step1Config, Step2Config, execute
from nvqoc.model import NvModel
from nvqoc.photophysics import PlantedReadout, ReadoutParams

runs = Path("runs")
planted = NvModel(planted_readout=PlantedReadout(ReadoutParams(21.0, 585.0, 260.0, 470.0)))
s1 = execute(RunManifest("step1", 1, planted.to_config(), {"step1": Step1Config(max_evals=300).to_dict()}),
             runs / "step1")
print((runs / "step1" / "step1.txt").read_text())

step2 = Step2Config(readout=s1.result.params, duration_ns=300, n_set=3, max_superiterations=4, max_evals=120,
                    shots=100_000)
scan = ScanConfig(spectrum_hz=tuple(np.linspace(-8e6, 8e6, 33)), shots=200_000)
s2 = execute(RunManifest("step2", 1, NvModel().to_config(), {"step2": step2.to_dict(), "scan": scan.to_dict()}),
             runs / "step2")
print(f"pulsed-ODMR FoM (lower is better) {s2.result.initial_fom:.4f} -> {s2.result.fom:.4f} "
      f"({s2.result.state.n_evals} evaluations)")
print((runs / "step2" / "podmr-amplitude-report.txt").read_text())
