"""Closed-loop optimal control of NV-centre magnetometry, in simulation.

Modules
-------
spin          two-level propagation and gate decomposition
pulses        dCRAB bases and amplitude restrictions
photophysics  optical rate model and photon-count readout
model         the simulated NV centre
protocols     pulsed ODMR, gate verification and Ramsey sequences
optimize      bounded Nelder-Mead and dCRAB
sensitivity   sensitivity formulas and curve fits
loop          wire protocol, experiment server, client and CLI
"""

from .model import HyperfineModel, NvModel
from .optimize import DcrabConfig, NelderMeadConfig, SearchSpace, dcrab_optimize, nelder_mead
from .photophysics import NvRates, PlantedReadout, ReadoutParams, simulate_readout
from .pulses import BasisKind, RestrictionMode, RestrictionPolicy
from .spin import ControlPulse, RwaHamiltonianParams, decompose, propagate, state_fidelity

__version__ = "0.1.0"
