"""Period map of the perturbed system, its fixed points and their classification."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cycle import Cycle
from .index import IndexReport, VanishingFieldError, winding_number
from .ode import ANALYSIS_ATOL, ANALYSIS_RTOL, IntegrationError, integrate_adaptive
from .system import PlanarSystem

__all__ = [
    "PoincareError", "FixedPointRecord", "FixedPointSet", "AndrCheck", "SweepRow", "Sweep",
    "poincare_map", "dp_jacobian", "find_fixed_points", "classify_fixed_point",
    "classify_matrix", "andr_index_check", "epsilon_sweep", "theorem_seeds",
    "fallback_seeds", "periodicity_defect", "orbit_distance", "write_fixed_points",
]

NONHYPERBOLIC_TOL = 1e-6
RESIDUAL_MAX = 1e-9
_HALVINGS = 10


class PoincareError(RuntimeError):
    pass


def _as_points(xi):
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    if pts.shape[-1] != 2:
        raise ValueError("points must have shape (2,) or (n, 2)")
    return pts, single


def _flow(system, eps, y0, T, rtol, atol, rhs=None):
    try:
        traj = integrate_adaptive(rhs or system.rhs(eps), y0, (0.0, T), rtol, atol)
    except IntegrationError as err:
        raise PoincareError(f"no solution on [0, T]: {err}") from err
    return traj.y[-1]


def poincare_map(system: PlanarSystem, eps: float, xi, rtol: float = ANALYSIS_RTOL,
                 atol: float = ANALYSIS_ATOL):
    """Time-T flow of x' = f(x) + eps g(t, x) started at ``xi`` at t = 0.

    ``xi`` may be one point ``(2,)`` or a batch ``(n, 2)``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    pts, single = _as_points(xi)
    out = _flow(system, eps, pts.T.copy(), system.T, rtol, atol).T
    return out[0] if single else out


def _variational_rhs(system, eps):
    def rhs(t, s):
        # s: (2, 3, m) -> state column and two tangent columns
        x = s[:, 0]
        fx, jf = system.f_jac(x)
        if eps != 0.0 and not system.g_is_zero:
            gx, jg = system.g_jac(t, x)
            fx = fx + eps * gx
            jf = jf + eps * jg
        out = np.empty_like(s)
        out[:, 0] = fx
        out[:, 1:] = np.einsum("ijm,jkm->ikm", jf, s[:, 1:])
        return out
    return rhs


def _map_and_jac(system, eps, pts, method, rtol, atol):
    """P and DP at each of ``pts`` (m, 2); returns (P (m, 2), A (m, 2, 2))."""
    m = len(pts)
    if method == "variational":
        s0 = np.zeros((2, 3, m))
        s0[:, 0] = pts.T
        s0[0, 1] = 1.0
        s0[1, 2] = 1.0
        end = _flow(system, eps, s0, system.T, rtol, atol, _variational_rhs(system, eps))
        return end[:, 0].T.copy(), np.moveaxis(end[:, 1:], -1, 0).copy()
    # central differences, all stencils in one integration so the step
    # sequence is shared and the quotient is smooth in h
    h = np.maximum(1e-6, 1e-7 * np.linalg.norm(pts, axis=1))
    stencil = [pts]
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1.0
        stencil += [pts + h[:, None] * e, pts - h[:, None] * e]
    ends = poincare_map(system, eps, np.concatenate(stencil), rtol, atol).reshape(5, m, 2)
    A = np.empty((m, 2, 2))
    for j in range(2):
        A[:, :, j] = (ends[1 + 2 * j] - ends[2 + 2 * j]) / (2 * h[:, None])
    return ends[0], A


def _map_and_jac_safe(system, eps, pts, method, rtol, atol):
    try:
        return _map_and_jac(system, eps, pts, method, rtol, atol)
    except PoincareError:
        P = np.full_like(pts, np.nan)
        A = np.full((len(pts), 2, 2), np.nan)
        for i, p in enumerate(pts):
            try:
                P[i:i + 1], A[i:i + 1] = _map_and_jac(system, eps, p[None], method, rtol, atol)
            except PoincareError:
                pass
        return P, A


def _method(system, method):
    if method in ("variational", "fd"):
        return method
    if method != "auto":
        raise ValueError(f"unknown Jacobian method {method!r}")
    return "variational" if system.g_smooth else "fd"


def dp_jacobian(system: PlanarSystem, eps: float, xi, method: str = "auto",
                rtol: float = ANALYSIS_RTOL, atol: float = ANALYSIS_ATOL):
    """Derivative of the period map at ``xi`` and the method used.

    ``auto`` picks the variational equations when g is smooth in x and
    central differences otherwise.
    """
    pts, single = _as_points(xi)
    meth = _method(system, method)
    _, A = _map_and_jac(system, eps, pts, meth, rtol, atol)
    return (A[0] if single else A), meth


# ---------------------------------------------------------------- classification

def classify_matrix(A, tol: float = NONHYPERBOLIC_TOL) -> dict:
    """Fixed-point index from sign det(I - A), then type and stability."""
    A = np.asarray(A, dtype=float)
    d = float(np.linalg.det(np.eye(2) - A))
    mults = np.linalg.eigvals(A)
    mods = np.abs(mults)
    if d < 0:
        kind = "saddle"
    elif abs(mults[0].imag) > 1e-12 * max(1.0, mods.max()):
        kind = "focus"
    else:
        kind = "node"
    if np.any(np.abs(mods - 1.0) <= tol):
        stab = "non-hyperbolic"
    elif np.all(mods < 1.0):
        stab = "stable"
    else:
        stab = "unstable"
    return {
        "index": 0 if d == 0 else (1 if d > 0 else -1),
        "det_I_minus_A": d,
        "multipliers": [complex(z) for z in mults],
        "type": kind,
        "stability": stab,
        "det_A": float(np.linalg.det(A)),
    }


@dataclass(frozen=True)
class FixedPointRecord:
    eps: float
    xi: np.ndarray
    residual: float
    A: np.ndarray
    jacobian_method: str
    multipliers: tuple = ()
    index: int = 0
    det_I_minus_A: float = float("nan")
    type: str = ""
    stability: str = ""
    side: str | None = None
    phase: float | None = None
    distance: float | None = None
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "x1": float(self.xi[0]),
            "x2": float(self.xi[1]),
            "residual": self.residual,
            "A": np.asarray(self.A).tolist(),
            "jacobian_method": self.jacobian_method,
            "multipliers": [[z.real, z.imag] for z in self.multipliers],
            "index": self.index,
            "det_I_minus_A": self.det_I_minus_A,
            "type": self.type,
            "stability": self.stability,
            "side": self.side,
            "phase": self.phase,
            "distance": self.distance,
            "iterations": self.iterations,
        }


def classify_fixed_point(record: FixedPointRecord, tol: float = NONHYPERBOLIC_TOL
                         ) -> FixedPointRecord:
    if not record.residual <= RESIDUAL_MAX:
        raise PoincareError(f"residual {record.residual:.2e} too large to classify")
    c = classify_matrix(record.A, tol)
    return replace(record, multipliers=tuple(c["multipliers"]), index=c["index"],
                   det_I_minus_A=c["det_I_minus_A"], type=c["type"],
                   stability=c["stability"])


# ---------------------------------------------------------------- Newton

@dataclass
class FixedPointSet:
    """Accepted fixed points plus bookkeeping about the seeds."""

    eps: float
    records: list
    n_seeds: int
    n_failed: int
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def sides(self) -> list:
        return [r.side for r in self.records]

    def nearest(self, k: int = 2) -> list:
        """The ``k`` records closest to the cycle."""
        return sorted(self.records, key=lambda r: r.distance)[:k]


def theorem_seeds(cycle: Cycle, phases: Sequence[float],
                  rel_offsets: Sequence[float] = (0.01, 0.05),
                  eps: float | None = None) -> np.ndarray:
    """x(theta) +- d n(theta) at the given phases, d a fraction of the diameter.

    With ``eps`` the offsets eps/3 and eps (times the diameter) are added:
    near a flat zero of M_E the Newton basin shrinks to O(eps).
    """
    phases = np.asarray(list(phases), dtype=float)
    if phases.size == 0:
        return np.zeros((0, 2))
    rel = list(rel_offsets) + ([eps / 3, eps] if eps else [])
    p = cycle.x(phases).reshape(-1, 2)
    v = cycle.xdot(phases).reshape(-1, 2)
    n = np.stack([-v[:, 1], v[:, 0]], 1) / np.linalg.norm(v, axis=1)[:, None]
    out = [p + s * r * cycle.diameter * n for r in rel for s in (1.0, -1.0)]
    return np.concatenate(out)


def fallback_seeds(cycle: Cycle, n: int = 16, rel_offsets=(0.01, 0.05)) -> np.ndarray:
    return theorem_seeds(cycle, np.linspace(0.0, cycle.T, n, endpoint=False), rel_offsets)


def _newton(system, eps, seeds, method, tol, max_iter, max_step, rtol, atol, max_slow=6):
    x = np.array(seeds, dtype=float)
    k = len(x)
    res = np.full(k, np.inf)
    iters = np.zeros(k, dtype=int)
    alive = np.ones(k, dtype=bool)
    done = np.zeros(k, dtype=bool)
    slow = np.zeros(k, dtype=int)
    P, A = _map_and_jac(system, eps, x, method, rtol, atol)
    F = x - P
    res = np.linalg.norm(F, axis=1)
    for it in range(max_iter):
        done |= alive & (res <= tol)
        alive &= ~done & np.isfinite(res)
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        M = np.eye(2) - A[idx]
        ok = np.abs(np.linalg.det(M)) > 1e-300
        step = np.zeros((idx.size, 2))
        step[ok] = np.linalg.solve(M[ok], F[idx][ok][..., None])[..., 0]
        alive[idx[~ok]] = False
        idx, step = idx[ok], step[ok]
        length = np.linalg.norm(step, axis=1)
        cap = np.where(length > max_step, max_step / np.maximum(length, 1e-300), 1.0)
        # every halving level is integrated in one batch; the largest step
        # that lowers the residual wins
        lam = cap[None, :] * 0.5 ** np.arange(_HALVINGS)[:, None]      # (L, m)
        trial = x[idx][None] - lam[..., None] * step[None]
        Pt, At = _map_and_jac_safe(system, eps, trial.reshape(-1, 2), method, rtol, atol)
        Pt = Pt.reshape(trial.shape)
        At = At.reshape(trial.shape[:2] + (2, 2))
        rt = np.linalg.norm(trial - Pt, axis=2)
        better = np.isfinite(rt) & ((rt < res[idx][None]) | (rt <= tol))
        found = better.any(axis=0)
        level = np.argmax(better, axis=0)
        iters[idx] += 1
        # seeds that could not decrease the residual are finished either way
        stuck = idx[~found]
        done[stuck] |= res[stuck] <= RESIDUAL_MAX
        alive[stuck] = False
        cols = np.nonzero(found)[0]
        moved = idx[cols]
        lv = level[cols]
        x[moved] = trial[lv, cols]
        F[moved] = trial[lv, cols] - Pt[lv, cols]
        A[moved] = At[lv, cols]
        new = rt[lv, cols]
        # heavily damped seeds are far from any root; give up on them
        slow[moved] = np.where(new > 0.5 * res[moved], slow[moved] + 1, 0)
        res[moved] = new
        alive &= slow < max_slow
    done |= res <= tol
    return x, res, A, done & (res <= RESIDUAL_MAX), iters


def find_fixed_points(system: PlanarSystem, eps: float, seeds, cycle: Cycle | None = None,
                      tol: float = 1e-10, max_iter: int = 50, method: str = "auto",
                      fallback=None, rtol: float = ANALYSIS_RTOL,
                      atol: float = ANALYSIS_ATOL) -> FixedPointSet:
    """Damped Newton on xi - P(xi) from every seed.

    Steps are halved until the residual decreases.  Converged points are
    merged when closer than 1e-6 times the cycle diameter.  ``fallback``
    seeds are tried only when the first batch does not produce points on
    both sides of the cycle.
    """
    if not eps > 0:
        raise ValueError("fixed-point search needs eps > 0")
    meth = _method(system, method)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    scale = cycle.diameter if cycle is not None else max(1.0, float(np.abs(seeds).max()))
    result = FixedPointSet(eps, [], 0, 0)
    batches = [seeds] + ([np.atleast_2d(np.asarray(fallback, float))] if fallback is not None else [])
    for b, batch in enumerate(batches):
        if b > 0:
            sides = set(result.sides())
            if len(result) >= 2 and {"inside", "outside"} <= sides:
                break
            result.notes.append("fallback seeds used")
        if len(batch) == 0:
            continue
        x, res, A, ok, iters = _newton(system, eps, batch, meth, tol, max_iter,
                                       0.25 * scale, rtol, atol)
        result.n_seeds += len(batch)
        result.n_failed += int((~ok).sum())
        for i in np.nonzero(ok)[0]:
            if any(np.linalg.norm(r.xi - x[i]) <= 1e-6 * scale for r in result.records):
                continue
            rec = FixedPointRecord(eps, x[i].copy(), float(res[i]), A[i].copy(), meth,
                                   iterations=int(iters[i]))
            rec = classify_fixed_point(rec)
            if cycle is not None:
                ph, dist = cycle.nearest_phase(rec.xi)
                rec = replace(rec, side=cycle.side(rec.xi), phase=ph, distance=dist)
            result.records.append(rec)
    if not result.records:
        result.notes.append("no seed converged")
    return result


# ---------------------------------------------------------------- checks

def periodicity_defect(system: PlanarSystem, eps: float, xi, periods: int = 3,
                       rtol: float = ANALYSIS_RTOL, atol: float = ANALYSIS_ATOL) -> float:
    """max over k = 1..periods of |x(kT) - xi| along the perturbed solution."""
    xi = np.asarray(xi, dtype=float)
    try:
        traj = integrate_adaptive(system.rhs(eps), xi, (0.0, periods * system.T), rtol, atol)
    except IntegrationError as err:
        raise PoincareError(str(err)) from err
    ts = system.T * np.arange(1, periods + 1)
    return float(np.max(np.linalg.norm(traj(ts) - xi, axis=1)))


def orbit_distance(system: PlanarSystem, eps: float, xi, cycle: Cycle, n: int = 2048,
                   rtol: float = ANALYSIS_RTOL, atol: float = ANALYSIS_ATOL) -> float:
    """Smallest distance from the solution through ``xi`` (t in [0, T]) to the cycle curve."""
    traj = integrate_adaptive(system.rhs(eps), np.asarray(xi, float), (0.0, system.T),
                              rtol, atol)
    pts = traj(np.linspace(0.0, system.T, n))
    curve = cycle.samples
    d = np.sqrt(((pts[:, None, :] - curve[None, :, :]) ** 2).sum(-1)).min(axis=1)
    best = np.argsort(d)[:4]
    return float(min(cycle.nearest_phase(pts[i])[1] for i in best))


@dataclass(frozen=True)
class AndrCheck:
    winding: IndexReport
    phi_index: int | None
    equal: bool
    eps: float
    min_norm: float

    def to_dict(self):
        return {"eps": self.eps, "winding": self.winding.index,
                "winding_report": self.winding.to_dict(), "phi_index": self.phi_index,
                "equal": self.equal, "min_norm": self.min_norm}


def andr_index_check(system: PlanarSystem, eps: float, cycle: Cycle, phi_index: int | None,
                     n0: int = 256, rtol: float = ANALYSIS_RTOL,
                     atol: float = ANALYSIS_ATOL) -> AndrCheck:
    """Winding of xi - P(xi) along the cycle (positive traversal) against ind Phi."""
    rev = cycle.orientation < 0

    def sample(n):
        pts = cycle.x(np.linspace(0.0, cycle.T, n, endpoint=False))
        v = pts - poincare_map(system, eps, pts, rtol, atol)
        return v[::-1] if rev else v

    first = sample(n0)
    if np.max(np.linalg.norm(first, axis=1)) <= 1e-8 * cycle.diameter:
        raise PoincareError("xi - P(xi) vanishes on the cycle (eps = 0 or cycle survives)")
    cache = {n0: first}
    try:
        rep = winding_number(lambda n: cache.pop(n) if n in cache else sample(n), n0=n0)
    except VanishingFieldError as err:
        raise PoincareError(f"field vanishes on the cycle; eps={eps} too large: {err}") from err
    equal = phi_index is not None and rep.admissible and rep.index == phi_index
    return AndrCheck(rep, phi_index, bool(equal), float(eps), rep.min_norm)


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SweepRow:
    eps: float
    points: FixedPointSet
    max_distance: float
    phases: tuple


@dataclass(frozen=True)
class Sweep:
    rows: tuple
    target_phases: tuple
    distance_decreasing: bool | None
    phase_error: float | None

    def to_dict(self):
        return {
            "rows": [{"eps": r.eps, "n_points": len(r.points), "max_distance": r.max_distance,
                      "phases": list(r.phases),
                      "points": [p.to_dict() for p in r.points.nearest()]}
                     for r in self.rows],
            "target_phases": list(self.target_phases),
            "distance_decreasing": self.distance_decreasing,
            "phase_error": self.phase_error,
        }


def _circ(a, b, T):
    d = abs(a - b) % T
    return min(d, T - d)


def epsilon_sweep(system: PlanarSystem, cycle: Cycle, eps_list: Sequence[float],
                  target_phases: Sequence[float], seeds=None, **kw) -> Sweep:
    """Fixed points for decreasing eps and their approach to the predicted phases.

    Only the two points nearest the cycle enter the distance and phase
    statistics.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    targets = tuple(float(t) for t in target_phases)
    fallback = kw.pop("fallback", None)
    if fallback is None:
        fallback = fallback_seeds(cycle)
    rows = []
    carried = np.zeros((0, 2))
    for eps in eps_list:
        base = theorem_seeds(cycle, targets, eps=eps) if seeds is None else seeds
        fps = find_fixed_points(system, eps, np.concatenate([carried, base]), cycle,
                                fallback=fallback, **kw)
        near = fps.nearest(2)
        dmax = max((r.distance for r in near), default=math.nan)
        rows.append(SweepRow(eps, fps, float(dmax), tuple(r.phase for r in near)))
        # continue from the current solutions: they are closer to the next ones
        if near:
            carried = np.array([r.xi for r in near])
    dec = None
    if len(rows) > 1:
        d = [r.max_distance for r in rows]
        dec = bool(all(b < a for a, b in zip(d, d[1:])))
    err = None
    if rows and rows[-1].phases and targets:
        err = float(max(min(_circ(p, t, cycle.T) for t in targets) for p in rows[-1].phases))
    return Sweep(tuple(rows), targets, dec, err)


def write_fixed_points(records, csv_path=None, json_path=None) -> None:
    rows = [r.to_dict() for r in records]
    if csv_path is not None:
        cols = ["eps", "x1", "x2", "residual", "type", "stability", "index", "det_I_minus_A",
                "side", "phase", "distance", "jacobian_method"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow(["" if r[c] is None else r[c] for c in cols])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(rows, fh, indent=2)
