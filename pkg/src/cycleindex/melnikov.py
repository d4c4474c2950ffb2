"""Bifurcation integrals M_E^s(theta), M_A^s(theta) and related identities.

    M_E^s(theta) = int_{s-T+theta}^{s+theta} <ztil(tau), g(tau - theta, x(tau))> dtau
    M_A^s(theta) = same with zhat

The integrands sample the dense frame; quadrature is a vectorized adaptive
Gauss-Kronrod 7/15 rule run over whole batches of (s, theta) at once.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .linearized import AdjointFrame, monodromy
from .ode import integrate_adaptive
from .system import PlanarSystem

__all__ = [
    "QuadratureError", "integrate_batch", "melnikov_values", "melnikov_pair",
    "MelnikovGrid", "melnikov_grid", "Zero", "ZeroSet", "zeros_of_me",
    "ConditionA", "condition_a_margin", "s_independence_defect", "averaged_field",
    "ftheta_defect", "CorollaryCheck", "corollary_cross_check", "third_derivative",
    "DEFAULT_QUAD_TOL",
]

DEFAULT_QUAD_TOL = 1e-10

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
# 15 nodes on [-1, 1] and both weight sets aligned with them
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5]] = _WG[:3]
_WG15[7] = _WG[3]
_WG15[[9, 11, 13]] = _WG[:3][::-1]


class QuadratureError(RuntimeError):
    pass


def integrate_batch(fn: Callable, a, b, tol: float = DEFAULT_QUAD_TOL, n_init: int = 8,
                    max_rounds: int = 60, scale_length: float | None = None) -> np.ndarray:
    """Adaptive G7/K15 quadrature of many integrals at once.

    ``fn(tau, ids)`` gets flat node arrays plus the integral index of each
    node and returns an array ``(k, len(tau))`` (k integrands sharing nodes).
    Each piece is accepted once its Kronrod-Gauss difference is below
    ``tol * width / scale_length``, so the total error estimate stays near
    ``tol``.  Oriented intervals (b < a) are allowed.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = a.size
    L = scale_length or float(np.max(np.abs(b - a))) or 1.0
    edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, n_init + 1)[None, :]
    lo = edges[:, :-1].ravel()
    hi = edges[:, 1:].ravel()
    ids = np.repeat(np.arange(n), n_init)
    total = None
    min_width = 1e-13 * L
    for _ in range(max_rounds):
        if lo.size == 0:
            break
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        tau = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
        vals = np.asarray(fn(tau, np.repeat(ids, 15)), dtype=float)
        vals = vals.reshape(vals.shape[0], -1, 15)
        k_est = (vals * _WK).sum(-1) * half
        g_est = (vals * _WG15).sum(-1) * half
        err = np.max(np.abs(k_est - g_est), axis=0)
        if total is None:
            total = np.zeros((vals.shape[0], n))
        if not np.all(np.isfinite(k_est)):
            raise QuadratureError("non-finite integrand")
        ok = (err <= tol * np.abs(hi - lo) / L) | (np.abs(hi - lo) <= min_width)
        for j in range(vals.shape[0]):
            np.add.at(total[j], ids[ok], k_est[j, ok])
        keep = ~ok
        lo, hi, ids = lo[keep], hi[keep], ids[keep]
        mid = mid[keep]
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        ids = np.concatenate([ids, ids])
    else:
        raise QuadratureError(f"quadrature did not converge ({lo.size // 2} pieces left)")
    return total


def _integrand(frame: AdjointFrame, theta_of_id: np.ndarray):
    system = frame.system

    def fn(tau, ids):
        st = frame.traj(tau)  # (m, 2, 4)
        x = st[:, :, 0].T
        g = system.g_val(tau - theta_of_id[ids], x)
        me = st[:, 0, 2] * g[0] + st[:, 1, 2] * g[1]
        ma = st[:, 0, 3] * g[0] + st[:, 1, 3] * g[1]
        return np.stack([me, ma])
    return fn


def melnikov_values(frame: AdjointFrame, s, theta, tol: float = DEFAULT_QUAD_TOL):
    """Arrays ``(M_E^s(theta), M_A^s(theta))`` for broadcast ``s`` and ``theta``."""
    s, theta = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(theta, dtype=float))
    shape = s.shape
    s, theta = s.ravel(), theta.ravel()
    T = frame.T
    if np.any(s < -1e-12 * T) or np.any(s > T * (1 + 1e-12)) or \
            np.any(theta < -1e-12 * T) or np.any(theta > T * (1 + 1e-12)):
        raise ValueError("s and theta must lie in [0, T]")
    if frame.system.g_is_zero:
        z = np.zeros(shape)
        return z, z.copy()
    out = integrate_batch(_integrand(frame, theta), s - T + theta, s + theta, tol,
                          scale_length=T)
    return out[0].reshape(shape), out[1].reshape(shape)


def melnikov_pair(frame: AdjointFrame, s: float, theta: float,
                  tol: float = DEFAULT_QUAD_TOL) -> tuple[float, float]:
    me, ma = melnikov_values(frame, s, theta, tol)
    return float(me), float(ma)


def _window_integral(frame: AdjointFrame, theta, lo, hi, which: int, tol=DEFAULT_QUAD_TOL):
    """int_lo^hi <z, g(tau - theta, x)> with z = ztil (which=0) or zhat (1)."""
    theta, lo, hi = np.broadcast_arrays(*(np.atleast_1d(np.asarray(v, float)) for v in (theta, lo, hi)))
    out = integrate_batch(_integrand(frame, theta.ravel()), lo.ravel(), hi.ravel(), tol,
                          scale_length=frame.T)
    return out[which]


@dataclass(frozen=True)
class MelnikovGrid:
    """``me[i, j] = M_E^{s_i}(theta_j)``; theta excludes T, s includes both ends."""

    theta: np.ndarray
    s: np.ndarray
    me: np.ndarray
    ma: np.ndarray
    tol: float
    frame: AdjointFrame = field(repr=False, compare=False)

    @property
    def T(self) -> float:
        return self.frame.T

    def row(self, s: float = 0.0) -> int:
        i = int(np.argmin(np.abs(self.s - s)))
        if abs(self.s[i] - s) > 1e-12 * self.T:
            raise KeyError(f"s={s} is not on the grid")
        return i

    def evaluator(self, s: float, which: int = 0) -> Callable[[float], float]:
        def fn(theta):
            return float(melnikov_values(self.frame, s, np.mod(theta, self.T), self.tol)[which])
        return fn

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "theta", "M_E", "M_A"])
            for i, s in enumerate(self.s):
                for j, th in enumerate(self.theta):
                    w.writerow([repr(float(s)), repr(float(th)),
                                repr(float(self.me[i, j])), repr(float(self.ma[i, j]))])


def melnikov_grid(frame: AdjointFrame, n_theta: int = 256, n_s: int = 32,
                  tol: float = DEFAULT_QUAD_TOL, n_init: int = 2) -> MelnikovGrid:
    """Tabulate both functions on a uniform theta grid and an s grid.

    For fixed theta the windows for different s overlap, so each theta
    integrates once over the union of the windows, piece by piece between
    window endpoints, and the s values come out of a cumulative sum.
    ``n_init`` is the number of starting Gauss-Kronrod panels per piece.
    """
    if n_theta < 8 or n_s < 1:
        raise ValueError("need n_theta >= 8 and n_s >= 1")
    T = frame.T
    theta = np.linspace(0.0, T, n_theta, endpoint=False)
    s = np.linspace(0.0, T, n_s) if n_s > 1 else np.zeros(1)
    if frame.system.g_is_zero:
        z = np.zeros((n_s, n_theta))
        return MelnikovGrid(theta, s, z, z.copy(), tol, frame)
    # breakpoints per theta: all window ends, offset by theta
    rel = np.unique(np.concatenate([s - T, s]))
    pts = theta[:, None] + rel[None, :]                      # (n_theta, m)
    lo, hi = pts[:, :-1].ravel(), pts[:, 1:].ravel()
    th_of_piece = np.repeat(theta, len(rel) - 1)
    pieces = integrate_batch(_integrand(frame, th_of_piece), lo, hi, tol,
                             n_init=n_init, scale_length=T)
    m = len(rel)
    cum = np.zeros((2, n_theta, m))
    cum[:, :, 1:] = np.cumsum(pieces.reshape(2, n_theta, m - 1), axis=2)
    i_hi = np.searchsorted(rel, s)
    i_lo = np.searchsorted(rel, s - T)
    vals = cum[:, :, i_hi] - cum[:, :, i_lo]                 # (2, n_theta, n_s)
    me, ma = vals[0].T.copy(), vals[1].T.copy()
    if not (np.all(np.isfinite(me)) and np.all(np.isfinite(ma))):
        raise QuadratureError("non-finite Melnikov values")
    return MelnikovGrid(theta, s, me, ma, tol, frame)


# ---------------------------------------------------------------- zeros

@dataclass(frozen=True)
class Zero:
    theta: float
    bracket: tuple
    slope: float
    odd_multiplicity: bool  # flat sign change (slope ~ 0)
    residual: float


@dataclass(frozen=True)
class ZeroSet:
    zeros: tuple
    identically_zero: bool = False
    scale: float = 0.0

    @property
    def thetas(self) -> list[float]:
        return [z.theta for z in self.zeros]

    def __len__(self):
        return len(self.zeros)


def _second_difference(fn, th, h):
    return (fn(th + h) - 2 * fn(th) + fn(th - h)) / (h * h)


def _flat_refine(fn, th, T, h=1e-2, span=5e-3):
    """Locate a flat odd zero through the simple zero of M'' (Richardson FD)."""
    d2 = lambda x: (4 * _second_difference(fn, x, h / 2) - _second_difference(fn, x, h)) / 3
    a, b = th - span, th + span
    da, db = d2(a), d2(b)
    if da * db > 0:
        return th
    return brentq(d2, a, b, xtol=1e-13)


def zeros_of_me(grid: MelnikovGrid, s: float = 0.0, tol: float = 1e-13,
                slope_tol: float = 1e-6, slope_h: float = 1e-4) -> ZeroSet:
    """Sign changes of M_E^s on the theta grid, refined on the full quadrature.

    Slope is a central difference with step ``slope_h*T``.  A sign change
    with ``|slope| <= slope_tol*scale`` is kept and flagged odd-multiplicity;
    its location is refined through the zero of the second derivative.
    """
    i = grid.row(s)
    v = grid.me[i]
    T = grid.T
    scale = float(np.max(np.abs(grid.me))) if grid.me.size else 0.0
    if scale <= 1e-12 * max(1.0, float(np.max(np.abs(grid.ma)))):
        return ZeroSet((), True, scale)
    fn = grid.evaluator(float(grid.s[i]), 0)
    th = grid.theta
    n = len(th)
    found = []
    for j in range(n):
        a, b = th[j], th[j + 1] if j + 1 < n else T
        va, vb = v[j], v[(j + 1) % n]
        if va == 0.0:
            root = a
        elif va * vb < 0:
            fa, fb = fn(a), fn(b)
            if fa * fb < 0:
                root = brentq(fn, a, b, xtol=tol, rtol=1e-15)
            else:
                # grid and direct quadrature disagree in sign only at noise level
                root = a if abs(fa) <= abs(fb) else b
        else:
            continue
        h = slope_h * T
        slope = (fn(root + h) - fn(root - h)) / (2 * h)
        flat = abs(slope) <= slope_tol * scale
        if flat:
            root = _flat_refine(fn, root, T)
        root = float(np.mod(root, T))
        if T - root < 1e-9 * T:
            root = 0.0
        found.append(Zero(root, (float(a), float(b)), float(slope), bool(flat), abs(fn(root))))
    # merge duplicates produced by exact grid zeros
    merged: list[Zero] = []
    for z in sorted(found, key=lambda z: z.theta):
        if merged and _circ(z.theta, merged[-1].theta, T) < 1e-6 * T:
            continue
        merged.append(z)
    if len(merged) > 1 and _circ(merged[0].theta, merged[-1].theta, T) < 1e-6 * T:
        merged.pop()
    return ZeroSet(tuple(merged), False, scale)


def _circ(a, b, T):
    d = abs(a - b) % T
    return min(d, T - d)


def third_derivative(fn: Callable[[float], float], theta: float, h: float) -> float:
    """Five-point central difference for the third derivative."""
    return (fn(theta + 2 * h) - 2 * fn(theta + h) + 2 * fn(theta - h) - fn(theta - 2 * h)) / (2 * h ** 3)


# ---------------------------------------------------------------- condition (A)

@dataclass(frozen=True)
class ConditionA:
    verdict: bool | None  # None: unverifiable
    margin: float
    scale: float
    margin_tol: float
    worst: tuple | None  # (s, theta) where the margin is attained
    per_row: list
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "margin": self.margin,
            "scale": self.scale,
            "margin_tol": self.margin_tol,
            "worst": None if self.worst is None else list(self.worst),
            "note": self.note,
        }


def condition_a_margin(grid: MelnikovGrid, zero_tol: float = 1e-13,
                       margin_tol: float = 1e-6) -> ConditionA:
    """min |M_A^s(theta)| over zeros of M_E^s, across all s rows.

    Besides the rows themselves, each zero branch is followed between
    adjacent rows; when M_A changes sign along it the crossing is located
    in s, so a margin that vanishes between grid rows is still found.
    """
    if len(grid.s) < 8:
        raise ValueError("condition (A) needs at least 8 s rows")
    scale = float(np.max(np.abs(grid.ma)))
    rows = []
    for i, s in enumerate(grid.s):
        zs = zeros_of_me(grid, float(s), zero_tol)
        if zs.identically_zero:
            return ConditionA(None, 0.0, scale, margin_tol, None, [],
                              "M_E vanishes identically; condition (A) unverifiable")
        ma = [float(melnikov_values(grid.frame, s, z.theta, grid.tol)[1]) for z in zs.zeros]
        rows.append((float(s), [z.theta for z in zs.zeros], ma))
    best = (math.inf, None)
    for s, ths, mas in rows:
        for th, ma in zip(ths, mas):
            if abs(ma) < best[0]:
                best = (abs(ma), (s, th))
    T = grid.T
    for (s0, th0, ma0), (s1, th1, ma1) in zip(rows, rows[1:]):
        for t0, m0 in zip(th0, ma0):
            if not th1:
                continue
            k = int(np.argmin([_circ(t0, t, T) for t in th1]))
            if _circ(t0, th1[k], T) > 0.05 * T or m0 * ma1[k] >= 0:
                continue
            hit = _crossing_in_s(grid, s0, s1, t0)
            if hit is not None and hit[2] < best[0]:
                best = (hit[2], (hit[0], hit[1]))
    margin = best[0] if best[1] is not None else math.inf
    verdict = margin > margin_tol * scale
    return ConditionA(bool(verdict), float(margin), scale, margin_tol, best[1], rows)


def _zero_near(frame, s, theta, T, tol):
    fn = lambda th: float(melnikov_values(frame, s, np.mod(th, T), tol)[0])
    h = 0.02 * T
    a, b = theta - h, theta + h
    fa, fb = fn(a), fn(b)
    if fa * fb > 0:
        return None
    return float(np.mod(brentq(fn, a, b, xtol=1e-13), T))


def _crossing_in_s(grid, s0, s1, theta):
    frame, T, tol = grid.frame, grid.T, grid.tol
    state = {"theta": theta}

    def ma_at(s):
        th = _zero_near(frame, s, state["theta"], T, tol)
        if th is None:
            raise ValueError
        state["theta"] = th
        return float(melnikov_values(frame, s, th, tol)[1])

    try:
        s_star = brentq(ma_at, s0, s1, xtol=1e-12 * T)
        val = abs(ma_at(s_star))
    except ValueError:
        return None
    return s_star, state["theta"], val


def s_independence_defect(grid: MelnikovGrid) -> tuple[float, float]:
    """max over theta of the spread over s, for M_E and M_A."""
    if len(grid.s) < 2:
        raise ValueError("need at least two s rows")
    d_e = float(np.max(grid.me.max(0) - grid.me.min(0)))
    d_a = float(np.max(grid.ma.max(0) - grid.ma.min(0)))
    return d_e, d_a


# ---------------------------------------------------------------- averaged field

def averaged_field(system: PlanarSystem, xi, s: float, rtol: float = 1e-12,
                   atol: float = 1e-14) -> np.ndarray:
    """int_{s-T}^{s} [D_xi Omega(tau, 0, xi)]^{-1} g(tau, Omega(tau, 0, xi)) dtau.

    The flow, its variational matrix and the running integral are advanced
    together from time 0 in both directions.
    """
    T = system.T

    def rhs(t, st):
        x = st[:, 0]
        J = st[:, 1:3]
        fx, jac = system.f_jac(x)
        out = np.empty_like(st)
        out[:, 0] = fx
        out[:, 1:3] = jac @ J
        out[:, 3] = np.linalg.solve(J, system.g_val(t, x))
        return out

    st0 = np.zeros((2, 4))
    st0[:, 0] = xi
    st0[:, 1:3] = np.eye(2)
    acc = np.zeros(2)
    if s != 0.0:
        acc = acc + integrate_adaptive(rhs, st0, (0.0, s), rtol, atol).y[-1][:, 3]
    if s - T != 0.0:
        acc = acc - integrate_adaptive(rhs, st0, (0.0, s - T), rtol, atol).y[0][:, 3]
    return acc


def ftheta_defect(frame: AdjointFrame, s: float, theta: float, swap: bool = False,
                  tol: float = DEFAULT_QUAD_TOL) -> float:
    """|averaged field at x(theta) - M_A^s(theta) x'(theta) - M_E^s(theta) yhat(theta)|.

    ``swap`` exchanges the roles of the two functions (a negative control).
    """
    me, ma = melnikov_pair(frame, s, theta, tol)
    if swap:
        me, ma = ma, me
    phi = averaged_field(frame.system, frame.x(theta), s, frame.cycle.rtol, frame.cycle.atol)
    pred = ma * frame.xdot(theta) + me * frame.yhat(theta)
    return float(np.linalg.norm(phi - pred))


@dataclass(frozen=True)
class CorollaryCheck:
    defect: float           # against int_0^T <zhat, g(tau - theta, x)>, as the proof derives
    defect_literal: float   # same with M_A^T(theta) taken literally
    defect_display: float   # same with M_A^T(0)
    coefficient: float

    def to_dict(self):
        return dict(self.__dict__)


def corollary_cross_check(frame: AdjointFrame, s: float, theta: float,
                          tol: float = DEFAULT_QUAD_TOL, mono=None) -> CorollaryCheck:
    """Check M_A^s(theta) = A - c * int_{s+theta}^{T} <ztil, g(tau - theta, x)>.

    ``c = zhat2(T) / ztil2(0)``.  Needs a double multiplier +1 and a frame
    started where zhat2 (equivalently x'2) vanishes.
    """
    from .linearized import FrameError

    mono = mono or monodromy(frame.cycle)
    if not mono.double_unit:
        raise FrameError(f"needs a double multiplier +1, monodromy is {mono.classification}")
    z0 = frame.zhat(0.0)
    if abs(z0[1]) > 1e-10 * np.linalg.norm(z0):
        raise FrameError("frame must start where zhat2 = 0 (re-phase the cycle)")
    T = frame.T
    c = frame.zhat(T)[1] / frame.ztil(0.0)[1]
    _, ma = melnikov_pair(frame, s, theta, tol)
    corr = float(_window_integral(frame, theta, s + theta, T, 0, tol)[0])
    a_proof = float(_window_integral(frame, theta, 0.0, T, 1, tol)[0])
    _, a_lit = melnikov_pair(frame, T, theta, tol)
    _, a_disp = melnikov_pair(frame, T, 0.0, tol)
    return CorollaryCheck(
        abs(ma - (a_proof - c * corr)),
        abs(ma - (a_lit - c * corr)),
        abs(ma - (a_disp - c * corr)),
        float(c),
    )
