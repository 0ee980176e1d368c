"""Simulated NV centre: the ground truth hidden behind the experiment server.

Configuration files are JSON.  Frequencies are given in Hz and converted to
rad/s on load; times are in seconds unless the key says otherwise::

    {
      "rates": {"radiative": 8.3e7, "isc_ms1": 6.7e7, ...},   # 1/s, see NvRates
      "rabi_max_hz": 10e6,          # Rabi frequency at full drive amplitude
      "t2_star_s": 1.5e-6,          # inhomogeneous dephasing time
      "decay_order": 2,             # 2: Gaussian quasi-static noise, 1: Lorentzian
      "resonance_hz": 2.87e9,       # omega_nv / 2 pi of the driven transition
      "hyperfine": {"offsets_hz": [-2.16e6, 0, 2.16e6], "weights": [1, 1, 1]},
      "dephasing_nodes": 24,        # quadrature nodes for the quasi-static average
      "dt_s": null,                 # propagation step; default 0.05 / rabi_max
      "planted_readout": null       # optional PlantedReadout parameters
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .photophysics import NvRates, PlantedReadout, ReadoutParams
from .spin import TWO_PI, ControlPulse

#: 14N hyperfine splitting of the m_s = 0 <-> +-1 transitions.
N14_HYPERFINE_HZ = 2.16e6


@dataclass(frozen=True)
class HyperfineModel:
    """Resolved hyperfine lines plus quasi-static dephasing.

    ``offsets`` are line detunings relative to the central transition (rad/s)
    and ``weights`` their populations.  The quasi-static detuning noise is
    Gaussian with ``std = sqrt(2) / t2_star`` for ``decay_order == 2`` (giving
    ``exp(-(tau/T2*)**2)`` fringe decay) and Lorentzian with half width
    ``1 / t2_star`` for ``decay_order == 1``.
    """

    offsets: tuple = (-TWO_PI * N14_HYPERFINE_HZ, 0.0, TWO_PI * N14_HYPERFINE_HZ)
    weights: tuple = (1 / 3, 1 / 3, 1 / 3)
    t2_star: float = 1.5e-6
    decay_order: int = 2

    def __post_init__(self):
        off = tuple(float(o) for o in self.offsets)
        w = np.asarray(self.weights, dtype=float)
        if len(off) != w.size or w.size == 0:
            raise ValueError("offsets and weights must have the same non-zero length")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("hyperfine weights must be non-negative")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))
        if self.decay_order not in (1, 2):
            raise ValueError("decay_order must be 1 or 2")
        if not self.t2_star > 0:
            raise ValueError("t2_star must be positive (use inf for no dephasing)")

    @classmethod
    def single_line(cls, t2_star=np.inf, decay_order=2) -> "HyperfineModel":
        return cls((0.0,), (1.0,), t2_star, decay_order)

    @property
    def dephasing_std(self) -> float:
        return 0.0 if np.isinf(self.t2_star) else np.sqrt(2.0) / self.t2_star

    def ensemble(self, n_nodes: int = 24, rng=None):
        """Detuning offsets and weights averaging over lines and dephasing.

        Without ``rng`` the dephasing average uses deterministic quadrature
        (Gauss-Hermite for Gaussian noise, equal-probability quantiles for
        Lorentzian noise); with ``rng`` it uses ``n_nodes`` random quasi-static
        draws.  Returns ``(detunings, weights)`` flattened over lines x nodes.
        """
        if np.isinf(self.t2_star) or n_nodes <= 1:
            d, w = np.zeros(1), np.ones(1)
        elif rng is not None:
            gen = np.random.default_rng(rng)
            if self.decay_order == 2:
                d = gen.normal(0.0, self.dephasing_std, n_nodes)
            else:
                d = gen.standard_cauchy(n_nodes) / self.t2_star
            w = np.full(n_nodes, 1.0 / n_nodes)
        elif self.decay_order == 2:
            x, w = hermegauss(n_nodes)
            d = self.dephasing_std * x
            w = w / w.sum()
        else:
            u = (np.arange(n_nodes) + 0.5) / n_nodes
            d = np.tan(np.pi * (u - 0.5)) / self.t2_star
            w = np.full(n_nodes, 1.0 / n_nodes)
        off = np.asarray(self.offsets)
        lw = np.asarray(self.weights)
        return (off[:, None] + d[None, :]).ravel(), (lw[:, None] * w[None, :]).ravel()


@dataclass(frozen=True)
class NvModel:
    """Everything the simulator knows about one NV centre."""

    rates: NvRates = field(default_factory=NvRates)
    rabi_max: float = TWO_PI * 10e6
    hyperfine: HyperfineModel = field(default_factory=HyperfineModel)
    resonance: float = TWO_PI * 2.87e9
    dephasing_nodes: int = 24
    dt: float | None = None
    planted_readout: PlantedReadout | None = None

    def __post_init__(self):
        if not self.rabi_max > 0:
            raise ValueError("rabi_max must be positive")

    @property
    def step(self) -> float:
        """Propagation step; by default ``rabi_max * dt = 0.05`` rad."""
        return self.dt if self.dt else 0.05 / self.rabi_max

    @property
    def t2_star(self) -> float:
        return self.hyperfine.t2_star

    @property
    def readout_source(self):
        return self.planted_readout if self.planted_readout is not None else self.rates

    def pi_duration(self) -> float:
        return np.pi / self.rabi_max

    def rectangular(self, angle: float, phase: float = 0.0) -> ControlPulse:
        """Full-amplitude rectangular rotation by ``angle`` about an equatorial axis."""
        return ControlPulse.rectangular(self.rabi_max, angle / self.rabi_max, self.step, phase,
                                        rabi_max=self.rabi_max * (1 + 1e-12))

    def pi_x(self) -> ControlPulse:
        """Calibrated rectangular pi_x reference pulse."""
        return self.rectangular(np.pi)

    def ensemble(self, rng=None):
        return self.hyperfine.ensemble(self.dephasing_nodes, rng)

    # --- config --------------------------------------------------------------

    def to_config(self) -> dict:
        cfg = {
            "rates": asdict(self.rates),
            "rabi_max_hz": self.rabi_max / TWO_PI,
            "t2_star_s": None if np.isinf(self.hyperfine.t2_star) else self.hyperfine.t2_star,
            "decay_order": self.hyperfine.decay_order,
            "resonance_hz": self.resonance / TWO_PI,
            "hyperfine": {
                "offsets_hz": [o / TWO_PI for o in self.hyperfine.offsets],
                "weights": list(self.hyperfine.weights),
            },
            "dephasing_nodes": self.dephasing_nodes,
            "dt_s": self.dt,
            "planted_readout": None,
        }
        if self.planted_readout is not None:
            p = self.planted_readout
            cfg["planted_readout"] = {
                "optimum": p.optimum.as_dict(),
                "c_max": p.c_max,
                "counts_per_shot": p.counts_per_shot,
                "saturation_counts_per_shot": p.saturation_counts_per_shot,
                "width_fraction": p.width_fraction,
            }
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "NvModel":
        known = {f.name for f in fields(NvRates)}
        rate_cfg = dict(cfg.get("rates") or {})
        unknown = set(rate_cfg) - known
        if unknown:
            raise ValueError(f"unknown rate keys: {sorted(unknown)}")
        hf = cfg.get("hyperfine") or {}
        t2 = cfg.get("t2_star_s", 1.5e-6)
        hyper = HyperfineModel(
            tuple(TWO_PI * np.asarray(hf.get("offsets_hz", [-N14_HYPERFINE_HZ, 0.0, N14_HYPERFINE_HZ]))),
            tuple(hf.get("weights", [1.0] * len(hf.get("offsets_hz", [0, 0, 0])))),
            np.inf if t2 is None else float(t2),
            int(cfg.get("decay_order", 2)),
        )
        planted = None
        if cfg.get("planted_readout"):
            p = dict(cfg["planted_readout"])
            p["optimum"] = ReadoutParams(**p["optimum"])
            planted = PlantedReadout(**p)
        return cls(
            rates=NvRates(**rate_cfg),
            rabi_max=TWO_PI * float(cfg.get("rabi_max_hz", 10e6)),
            hyperfine=hyper,
            resonance=TWO_PI * float(cfg.get("resonance_hz", 2.87e9)),
            dephasing_nodes=int(cfg.get("dephasing_nodes", 24)),
            dt=cfg.get("dt_s"),
            planted_readout=planted,
        )


def load_model(path) -> NvModel:
    return NvModel.from_config(json.loads(Path(path).read_text(encoding="utf-8")))


def save_model(path, model: NvModel) -> None:
    Path(path).write_text(json.dumps(model.to_config(), indent=2), encoding="utf-8")
