"""Config validation and the end-to-end analysis shared by the CLI and the verifier."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .cycle import Cycle, cycle_from_initial, find_cycle_with_period, isolation_check
from .index import (IndexError_, IndexReport, PhiCurve, VerdictReport, phi_curve,
                    theorem_verdict, winding_number)
from .linearized import AdjointFrame, Monodromy, adjoint_frame, monodromy
from .melnikov import (DEFAULT_QUAD_TOL, ConditionA, MelnikovGrid, ZeroSet, condition_a_margin,
                       melnikov_grid, melnikov_values, zeros_of_me)
from .ode import ANALYSIS_ATOL, ANALYSIS_RTOL
from .system import ConfigError, PlanarSystem, load_system

__all__ = ["AnalysisConfig", "Analysis", "parse_config", "build_cycle", "run_analysis"]

_TOP_KEYS = {"system", "cycle", "grids", "tolerances", "epsilons", "out"}


@dataclass(frozen=True)
class AnalysisConfig:
    system: PlanarSystem
    cycle: Mapping | None
    n_theta: int = 256
    n_s: int = 32
    rtol: float = ANALYSIS_RTOL
    atol: float = ANALYSIS_ATOL
    quad_tol: float = DEFAULT_QUAD_TOL
    epsilons: tuple = ()
    out: str | None = None
    raw: Mapping = field(default_factory=dict, compare=False)


def _number(v, what, positive=True):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{what} must be a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{what} must be positive, got {v!r}")
    return float(v)


def _check_cycle_block(block) -> Mapping:
    if not isinstance(block, Mapping):
        raise ConfigError("cycle must be an object")
    kinds = [k for k in ("initial", "shoot") if k in block]
    if len(kinds) != 1:
        raise ConfigError("cycle needs exactly one of 'initial' or 'shoot'")
    if kinds[0] == "initial":
        pt = block["initial"]
        if not (isinstance(pt, list) and len(pt) == 2):
            raise ConfigError("cycle.initial must be a list of two numbers")
        for i, v in enumerate(pt):
            _number(v, f"cycle.initial[{i}]", positive=False)
        if "T" in block:
            _number(block["T"], "cycle.T")
        extra = set(block) - {"initial", "T"}
    else:
        sh = block["shoot"]
        if not isinstance(sh, Mapping):
            raise ConfigError("cycle.shoot must be an object")
        if sh.get("section") not in ("x1=0", "x2=0"):
            raise ConfigError("cycle.shoot.section must be 'x1=0' or 'x2=0'")
        _number(sh.get("period"), "cycle.shoot.period")
        br = sh.get("bracket")
        if not (isinstance(br, list) and len(br) == 2):
            raise ConfigError("cycle.shoot.bracket must be [lo, hi]")
        lo, hi = (_number(v, "cycle.shoot.bracket", positive=False) for v in br)
        if not lo < hi:
            raise ConfigError("cycle.shoot.bracket needs lo < hi")
        extra = set(block) - {"shoot"}
    if extra:
        raise ConfigError(f"unknown cycle key(s) {sorted(extra)}")
    return dict(block)


def parse_config(raw) -> AnalysisConfig:
    """Validate a config object; every problem surfaces as ConfigError."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - _TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level key(s) {sorted(extra)}; allowed {sorted(_TOP_KEYS)}")
    if "system" not in raw:
        raise ConfigError("config needs a 'system' entry")
    system = load_system(raw)
    cyc = _check_cycle_block(raw["cycle"]) if "cycle" in raw else None
    if cyc is None and system.cycle_start is None:
        raise ConfigError("inline systems need a 'cycle' entry")
    grids = raw.get("grids", {})
    if not isinstance(grids, Mapping) or set(grids) - {"n_theta", "n_s"}:
        raise ConfigError("grids must be an object with n_theta and/or n_s")
    n_theta = grids.get("n_theta", 256)
    n_s = grids.get("n_s", 32)
    if not (isinstance(n_theta, int) and n_theta >= 8):
        raise ConfigError("grids.n_theta must be an integer >= 8")
    if not (isinstance(n_s, int) and n_s >= 8):
        raise ConfigError("grids.n_s must be an integer >= 8")
    tols = raw.get("tolerances", {})
    if not isinstance(tols, Mapping) or set(tols) - {"rtol", "atol", "quad"}:
        raise ConfigError("tolerances may contain rtol, atol and quad")
    eps = raw.get("epsilons", [])
    if not isinstance(eps, list):
        raise ConfigError("epsilons must be a list")
    eps = tuple(_number(e, "epsilon") for e in eps)
    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a path string")
    return AnalysisConfig(
        system, cyc, n_theta, n_s,
        _number(tols.get("rtol", ANALYSIS_RTOL), "tolerances.rtol"),
        _number(tols.get("atol", ANALYSIS_ATOL), "tolerances.atol"),
        _number(tols.get("quad", DEFAULT_QUAD_TOL), "tolerances.quad"),
        eps, out, dict(raw))


def build_cycle(system: PlanarSystem, block: Mapping | None, rtol: float = ANALYSIS_RTOL,
                atol: float = ANALYSIS_ATOL) -> Cycle:
    if block is None:
        return cycle_from_initial(system, system.cycle_start, system.cycle_period or system.T,
                                  rtol=rtol, atol=atol)
    if "initial" in block:
        return cycle_from_initial(system, block["initial"], block.get("T", system.T),
                                  rtol=rtol, atol=atol)
    sh = block["shoot"]
    return find_cycle_with_period(system, sh["section"], float(sh["period"]), sh["bracket"])


@dataclass
class Analysis:
    system: PlanarSystem
    cycle: Cycle
    mono: Monodromy
    frame: AdjointFrame
    grid: MelnikovGrid
    zeros: ZeroSet
    ma_at_zeros: list
    condition_a: ConditionA
    phi: PhiCurve | None
    index: IndexReport | None
    isolated: bool | None
    verdict: VerdictReport
    notes: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.mono.classification == "degenerate"

    def summary(self) -> dict:
        c = self.cycle
        return {
            "system": self.system.describe(),
            "cycle": {
                "start": c.x(0.0).tolist(), "T": c.T, "closure_defect": c.closure_defect,
                "orientation": c.orientation, "orientation_reversed": c.orientation < 0,
                "diameter": c.diameter, "meta": {k: v for k, v in c.meta.items()},
            },
            "monodromy": {
                "classification": self.mono.classification,
                "Y": self.mono.Y.tolist(), "trace": self.mono.trace, "det": self.mono.det,
                "multipliers": [[complex(z).real, complex(z).imag] for z in self.mono.multipliers],
            },
            "zeros_of_M_E": [{"theta": z.theta, "slope": z.slope,
                              "odd_multiplicity": z.odd_multiplicity} for z in self.zeros.zeros],
            "M_E_identically_zero": self.zeros.identically_zero,
            "M_A_at_zeros": self.ma_at_zeros,
            "condition_A": self.condition_a.to_dict(),
            "index": None if self.index is None else self.index.to_dict(),
            "isolated": self.isolated,
            "verdict": self.verdict.to_dict(),
            "notes": list(self.notes),
        }


def run_analysis(system: PlanarSystem, cycle: Cycle, n_theta: int = 256, n_s: int = 32,
                 quad_tol: float = DEFAULT_QUAD_TOL, frame: AdjointFrame | None = None,
                 check_isolation: bool = True) -> Analysis:
    """Cycle -> monodromy -> adjoint frame -> Melnikov grid -> Phi -> verdict."""
    mono = monodromy(cycle)
    frame = frame or adjoint_frame(cycle)
    grid = melnikov_grid(frame, n_theta, n_s, quad_tol)
    zeros = zeros_of_me(grid)
    ma = [float(melnikov_values(frame, 0.0, z, quad_tol)[1]) for z in zeros.thetas]
    cond = condition_a_margin(grid)
    notes = []
    phi = index = None
    try:
        phi = phi_curve(grid)
        index = winding_number(phi)
    except IndexError_ as err:  # vanishing Phi: index undefined
        notes.append(f"index undefined: {err}")
    iso = isolation_check(cycle).holds if check_isolation else None
    if iso is False:
        notes.append("nearby orbits are T-periodic too; the cycle is not isolated")
    verdict = theorem_verdict(cond, index, mono.classification == "degenerate", zeros, ma, iso)
    return Analysis(system, cycle, mono, frame, grid, zeros, ma, cond, phi, index, iso,
                    verdict, notes)
