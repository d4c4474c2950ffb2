"""The generating cycle: construction, shooting, orientation and geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .geometry import shoelace_area, winding_sum
from .ode import (ANALYSIS_ATOL, ANALYSIS_RTOL, DEFAULT_ATOL, DEFAULT_RTOL, DenseTrajectory,
                  integrate_adaptive)
from .system import PlanarSystem

__all__ = [
    "CycleError", "Cycle", "FamilyScan", "cycle_from_initial", "first_return",
    "find_cycle_with_period", "point_side", "orientation", "critical_period_scan",
    "rephase", "IsolationCheck", "isolation_check",
]

N_SAMPLES = 1024


class CycleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cycle:
    """T-periodic orbit of the generating system stored over ``[-T, 2T]``."""

    system: PlanarSystem
    T: float
    traj: DenseTrajectory
    closure_defect: float
    rtol: float = ANALYSIS_RTOL
    atol: float = ANALYSIS_ATOL
    meta: dict = field(default_factory=dict, compare=False)

    def _wrap(self, theta):
        theta = np.asarray(theta, dtype=float)
        lo, hi = -self.T, 2 * self.T
        if np.any((theta < lo) | (theta > hi)):
            theta = np.where((theta < lo) | (theta > hi), np.mod(theta, self.T), theta)
        return theta

    def x(self, theta):
        """Point(s) on the cycle; array input gives shape ``(n, 2)``."""
        return self.traj(self._wrap(theta))

    def xdot(self, theta):
        """f evaluated on the cycle, shape matching :meth:`x`."""
        pts = np.asarray(self.x(theta))
        return np.moveaxis(self.system.f_val(np.moveaxis(pts, -1, 0)), 0, -1)

    @cached_property
    def samples(self) -> np.ndarray:
        return self.sample_points(N_SAMPLES)

    def sample_points(self, n: int) -> np.ndarray:
        return self.x(np.linspace(0.0, self.T, n, endpoint=False))

    @cached_property
    def signed_area(self) -> float:
        return shoelace_area(self.samples)

    @cached_property
    def orientation(self) -> int:
        return orientation(self)

    @cached_property
    def diameter(self) -> float:
        p = self.samples
        d = p[:, None, :] - p[None, ::4, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @cached_property
    def center(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def nearest_phase(self, xi) -> tuple[float, float]:
        """Phase in ``[0, T)`` of the closest cycle point and the distance to it."""
        xi = np.asarray(xi, dtype=float)
        d = np.hypot(*(self.samples - xi).T)
        i = int(np.argmin(d))
        h = self.T / N_SAMPLES
        dist = lambda th: float(np.hypot(*(self.x(th) - xi)))
        res = minimize_scalar(dist, bounds=(i * h - h, i * h + h), method="bounded",
                              options={"xatol": 1e-12 * self.T})
        if res.fun <= d[i]:
            ph = float(np.mod(res.x, self.T))
            return (0.0 if self.T - ph <= 1e-9 * self.T else ph), float(res.fun)
        return float(i * h), float(d[i])

    def side(self, xi, boundary_tol: float | None = None) -> str:
        return point_side(self, xi, boundary_tol)


def _closure(system, xi0, T, rtol, atol):
    fwd = integrate_adaptive(system.rhs(), np.asarray(xi0, float), (0.0, 2 * T), rtol, atol)
    bwd = integrate_adaptive(system.rhs(), np.asarray(xi0, float), (0.0, -T), rtol, atol)
    traj = bwd.join(fwd)
    return traj, float(np.linalg.norm(traj(T) - traj(0.0)))


def cycle_from_initial(system: PlanarSystem, xi0, T: float, tol: float = 1e-7,
                       rtol: float = ANALYSIS_RTOL, atol: float = ANALYSIS_ATOL,
                       meta: dict | None = None) -> Cycle:
    """Integrate the generating system from ``xi0`` over ``[-T, 2T]`` and check closure.

    ``tol`` is relative to ``max(1, |xi0|)``.
    """
    if not T > 0:
        raise CycleError("period must be positive")
    xi0 = np.asarray(xi0, dtype=float)
    speed = float(np.linalg.norm(system.f_val(xi0)))
    scale = max(1.0, float(np.linalg.norm(xi0)))
    if speed <= 1e-10 * scale:
        raise CycleError(f"initial point {xi0.tolist()} is an equilibrium (|f| = {speed:.2e})")
    traj, defect = _closure(system, xi0, T, rtol, atol)
    if defect > tol * scale:
        raise CycleError(f"orbit through {xi0.tolist()} does not close after T={T:.12g} "
                         f"(defect {defect:.3e})")
    cyc = Cycle(system, float(T), traj, defect, rtol, atol, dict(meta or {}))
    speeds = np.linalg.norm(cyc.xdot(np.linspace(0, T, 256, endpoint=False)), axis=1)
    if speeds.min() <= 1e-10 * scale:
        raise CycleError("orbit passes through an equilibrium")
    return cyc


def orientation(cycle: Cycle) -> int:
    """Sign of the shoelace area: +1 counterclockwise, -1 clockwise."""
    area = cycle.signed_area
    scale = float(np.max(np.abs(cycle.samples))) ** 2
    if abs(area) <= 1e-12 * max(scale, 1e-300):
        raise CycleError("degenerate cycle (zero enclosed area)")
    return 1 if area > 0 else -1


def point_side(cycle: Cycle, xi, boundary_tol: float | None = None) -> str:
    """'inside', 'outside' or 'boundary' by winding of the cycle around ``xi``."""
    xi = np.asarray(xi, dtype=float)
    tol = 1e-7 * cycle.diameter if boundary_tol is None else boundary_tol
    _, dist = cycle.nearest_phase(xi)
    if dist <= tol:
        return "boundary"
    n = N_SAMPLES
    while True:
        rel = cycle.sample_points(n) - xi
        total, worst = winding_sum(rel)
        if worst < math.pi / 2 or n >= 2 ** 20:
            break
        n *= 2
    return "inside" if abs(round(total)) == 1 else "outside"


def _section_index(section: str) -> int:
    # index of the coordinate that vanishes on the section
    if section == "x2=0":
        return 1
    if section == "x1=0":
        return 0
    raise CycleError(f"unknown section {section!r}; use 'x2=0' or 'x1=0'")


def first_return(system: PlanarSystem, xi0, section: str, horizon: float,
                 rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> float:
    """Time of first return to the ray through ``xi0`` on ``section``.

    The return must cross in the same direction and on the same half-line.
    """
    k = _section_index(section)
    other = 1 - k
    xi0 = np.asarray(xi0, dtype=float)
    if xi0[other] == 0:
        raise CycleError("start point must lie off the origin on the section")
    ray_sign = np.sign(xi0[other])
    direction = np.sign(system.f_val(xi0)[k])
    if direction == 0:
        raise CycleError("flow is tangent to the section at the start point")
    rhs = system.rhs()
    chunk = horizon / 10
    t0, y0 = 0.0, xi0
    while t0 < horizon:
        tr = integrate_adaptive(rhs, y0, (t0, t0 + chunk), rtol, atol)
        c = tr.y[:, k]
        for i in range(len(tr.t) - 1):
            if tr.t[i + 1] < 1e-9 * horizon:
                continue
            a, b = c[i], c[i + 1]
            if direction > 0:
                crossing = a < 0 <= b
            else:
                crossing = a > 0 >= b
            if not crossing:
                continue
            tc = brentq(lambda s: float(tr(s)[k]), tr.t[i], tr.t[i + 1], xtol=1e-15, rtol=1e-15)
            if np.sign(tr(tc)[other]) != ray_sign:
                continue
            return _polish_return(system, xi0, k, tc, rtol, atol)
        t0, y0 = tr.t[-1], tr.y[-1]
    raise CycleError(f"no return to section {section} within horizon {horizon:.6g}")


def _polish_return(system, xi0, k, tc, rtol, atol):
    # one Newton step on the section coordinate with a fresh integration;
    # the interpolated root is already accurate to the dense-output error
    y = integrate_adaptive(system.rhs(), xi0, (0.0, tc), rtol, atol).y[-1]
    return float(tc - y[k] / system.f_val(y)[k])


def find_cycle_with_period(system: PlanarSystem, section: str, T_target: float,
                           bracket: Sequence[float], rtol: float = DEFAULT_RTOL,
                           atol: float = DEFAULT_ATOL, tol: float = 1e-9) -> Cycle:
    """Shoot along the positive ray of ``section`` for the orbit of period ``T_target``."""
    k = _section_index(section)
    horizon = 10 * T_target

    def start(a):
        p = np.zeros(2)
        p[1 - k] = a
        return p

    def mismatch(a):
        return first_return(system, start(a), section, horizon, rtol, atol) - T_target

    lo, hi = float(bracket[0]), float(bracket[1])
    try:
        f_lo, f_hi = mismatch(lo), mismatch(hi)
    except CycleError as err:
        raise CycleError(f"shooting failed at a bracket end: {err}") from err
    if f_lo * f_hi > 0:
        raise CycleError(
            f"bracket [{lo}, {hi}] does not straddle period {T_target:.12g} "
            f"(periods {f_lo + T_target:.9g}, {f_hi + T_target:.9g})")
    a_star = brentq(mismatch, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    period = mismatch(a_star) + T_target
    if abs(period - T_target) > tol:
        raise CycleError(f"shooting converged to period {period!r}, target {T_target!r}")
    return cycle_from_initial(system, start(a_star), T_target,
                              meta={"amplitude": a_star, "first_return": period,
                                    "section": section})


def rephase(cycle: Cycle, component: int = 0) -> Cycle:
    """Restart the cycle at the first zero of the chosen component of x'."""
    th = np.linspace(0.0, cycle.T, 2048, endpoint=False)
    v = cycle.xdot(th)[:, component]
    if abs(v[0]) <= 1e-13 * np.abs(v).max():
        return cycle
    idx = np.nonzero(np.sign(v[1:]) != np.sign(v[:-1]))[0]
    if len(idx) == 0:
        raise CycleError(f"x'_{component + 1} has no zero on the cycle")
    i = idx[0]
    theta0 = brentq(lambda s: float(cycle.xdot(s)[component]), th[i], th[i + 1],
                    xtol=1e-15, rtol=1e-15)
    meta = dict(cycle.meta, phase_shift=float(theta0))
    return cycle_from_initial(cycle.system, cycle.x(theta0), cycle.T,
                              rtol=cycle.rtol, atol=cycle.atol, meta=meta)


@dataclass(frozen=True)
class FamilyScan:
    alpha: np.ndarray
    period: np.ndarray
    start: np.ndarray
    dperiod: np.ndarray
    tol: float

    @property
    def critical(self) -> np.ndarray:
        return np.abs(self.dperiod) <= self.tol

    @property
    def critical_alpha(self) -> np.ndarray:
        return self.alpha[self.critical]


def critical_period_scan(system: PlanarSystem, alphas, initial: Callable | None = None,
                         section: str = "x1=0", tol: float = 1e-3,
                         horizon: float | None = None) -> FamilyScan:
    """First-return period along a one-parameter family of starting points.

    ``initial(alpha)`` defaults to ``(0, alpha)``.  T' uses second-order
    differences on the (possibly non-uniform) grid.
    """
    alphas = np.asarray(alphas, dtype=float)
    if len(alphas) < 3 or np.any(np.diff(alphas) <= 0):
        raise ValueError("alpha grid must be strictly increasing with at least 3 points")
    initial = initial or (lambda a: (0.0, a))
    starts = np.array([initial(a) for a in alphas], dtype=float)
    hz = horizon or 20 * system.T
    periods = np.array([first_return(system, p, section, hz) for p in starts])
    dT = np.gradient(periods, alphas, edge_order=2)
    return FamilyScan(alphas, periods, starts, dT, tol)


@dataclass(frozen=True)
class IsolationCheck:
    holds: bool
    offsets: tuple
    defects: tuple
    tol: float

    def to_dict(self) -> dict:
        return {"holds": self.holds, "offsets": list(self.offsets),
                "closure_defects": list(self.defects), "tol": self.tol}


def isolation_check(cycle: Cycle, rel_offsets: Sequence[float] = (1e-2, 3e-3),
                    n_phases: int = 4, tol: float = 1e-9) -> IsolationCheck:
    """Probe whether orbits just off the cycle are also T-periodic.

    Points ``x(theta) +- d n(theta)`` are flowed for one period; if any of
    them closes up to ``tol`` (relative to ``d``) the cycle is not isolated
    among T-periodic solutions (e.g. a linear centre).
    """
    T = cycle.T
    offs, defects = [], []
    th = np.linspace(0.0, T, n_phases, endpoint=False)
    pts = cycle.x(th)
    nrm = cycle.xdot(th)
    nrm = np.stack([-nrm[:, 1], nrm[:, 0]], 1) / np.linalg.norm(nrm, axis=1)[:, None]
    starts = []
    for r in rel_offsets:
        d = r * cycle.diameter
        for sgn in (1.0, -1.0):
            starts.append(pts + sgn * d * nrm)
            offs.append(sgn * r)
    y0 = np.concatenate(starts).T  # (2, k)
    traj = integrate_adaptive(cycle.system.rhs(), y0, (0.0, T), cycle.rtol, cycle.atol)
    gap = np.linalg.norm(traj.y[-1] - y0, axis=0).reshape(len(offs), n_phases).max(axis=1)
    for r, gp in zip(offs, gap):
        defects.append(float(gp / (abs(r) * cycle.diameter)))
    holds = min(defects) > tol
    return IsolationCheck(bool(holds), tuple(offs), tuple(defects), tol)
