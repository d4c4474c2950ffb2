"""Linearization along the cycle: monodromy, multipliers and the adjoint frame.

Conventions: ``perp(v) = (-v2, v1)``.  The frame carries

* ``yhat``  solving  y' = f'(x(t)) y,      yhat(0) = perp(x'(0)) / |x'(0)|^2
* ``ztil``  solving  z' = -f'(x(t))^T z,   ztil(0) = perp(x'(0))
* ``zhat``  solving  z' = -f'(x(t))^T z,   zhat(0) = x'(0) / |x'(0)|^2
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cycle import Cycle, rephase
from .ode import DenseTrajectory, integrate_adaptive

__all__ = [
    "FrameError", "Monodromy", "AdjointFrame", "perp", "monodromy", "fundamental_matrix",
    "adjoint_frame", "perron_defect", "perron_pairings", "lemma1_defect",
    "symmetry_form_defect", "liouville_defect", "tangent_solution_defect",
]

MULT_TOL = 1e-6


class FrameError(RuntimeError):
    pass


def perp(v):
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _variational_rhs(system):
    def rhs(t, s):
        # s[:, 0] is the state, the remaining columns are tangent vectors
        fx, jac = system.f_jac(s[:, 0])
        out = np.empty_like(s)
        out[:, 0] = fx
        out[:, 1:] = jac @ s[:, 1:]
        return out
    return rhs


def fundamental_matrix(cycle: Cycle, t_end: float | None = None) -> DenseTrajectory:
    """Dense solution of (x, Y) with Y(0) = I over ``[0, t_end]`` (default T)."""
    s0 = np.zeros((2, 3))
    s0[:, 0] = cycle.x(0.0)
    s0[:, 1:] = np.eye(2)
    return integrate_adaptive(_variational_rhs(cycle.system), s0,
                              (0.0, cycle.T if t_end is None else t_end),
                              cycle.rtol, cycle.atol)


@dataclass(frozen=True)
class Monodromy:
    Y: np.ndarray
    multipliers: tuple
    classification: str
    trace: float
    det: float
    liouville_det: float

    @property
    def double_unit(self) -> bool:
        """Multiplier +1 of algebraic multiplicity two."""
        return self.classification in ("C_ME", "degenerate")

    @property
    def identity_defect(self) -> float:
        return float(np.max(np.abs(self.Y - np.eye(2))))


def monodromy(cycle: Cycle, tol: float = MULT_TOL) -> Monodromy:
    """Y(T) of the linearization and its classification.

    Classification works on trace and determinant: a double multiplier +1
    means tr = 2 and det = 1.  Eigenvalues of a defective matrix split like
    the square root of the rounding error, so they are only reported.
    """
    traj = fundamental_matrix(cycle)
    Y = traj.y[-1][:, 1:]
    tr = float(np.trace(Y))
    det = float(np.linalg.det(Y))
    disc = complex(tr * tr / 4 - det)
    root = disc ** 0.5
    mults = (tr / 2 + root, tr / 2 - root)
    if abs(tr - 2) <= tol and abs(det - 1) <= tol:
        cls = "degenerate" if np.max(np.abs(Y - np.eye(2))) <= tol else "C_ME"
    elif abs(1 - tr + det) <= tol * max(1.0, abs(det)):
        cls = "C_MA"
    else:
        cls = "hyperbolic_other"
    return Monodromy(Y, mults, cls, tr, det, _liouville(cycle, cycle.T))


def _liouville(cycle: Cycle, t: float) -> float:
    from scipy.integrate import quad

    def div(s):
        _, jac = cycle.system.f_jac(cycle.x(s))
        return float(jac[0, 0] + jac[1, 1])

    n = max(8, int(math.ceil(abs(t) / cycle.T * 16)))
    edges = np.linspace(0.0, t, n + 1)
    total = sum(quad(div, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                for a, b in zip(edges, edges[1:]))
    return math.exp(total)


def liouville_defect(cycle: Cycle) -> float:
    """max over t in {T/4, T/2, T} of |det Y(t) - exp(int tr f')|."""
    traj = fundamental_matrix(cycle)
    out = 0.0
    for t in (cycle.T / 4, cycle.T / 2, cycle.T):
        Y = traj(t)[:, 1:]
        out = max(out, abs(np.linalg.det(Y) - _liouville(cycle, t)))
    return out


def tangent_solution_defect(cycle: Cycle, n: int = 64) -> float:
    """max |Y(t) x'(0) - x'(t)| on a grid of [0, T]."""
    traj = fundamental_matrix(cycle)
    ts = np.linspace(0.0, cycle.T, n)
    Ys = traj(ts)[:, :, 1:]
    lhs = Ys @ cycle.xdot(0.0)
    return float(np.max(np.linalg.norm(lhs - cycle.xdot(ts), axis=1)))


@dataclass(frozen=True)
class AdjointFrame:
    cycle: Cycle
    traj: DenseTrajectory  # state columns: x, yhat, ztil, zhat
    initial: dict = field(compare=False)

    @property
    def T(self) -> float:
        return self.cycle.T

    @property
    def system(self):
        return self.cycle.system

    def _col(self, t, j):
        return self.traj(t)[..., j]

    def x(self, t):
        return self._col(t, 0)

    def yhat(self, t):
        return self._col(t, 1)

    def ztil(self, t):
        return self._col(t, 2)

    def zhat(self, t):
        return self._col(t, 3)

    def xdot(self, t):
        pts = np.asarray(self.x(t))
        return np.moveaxis(self.system.f_val(np.moveaxis(pts, -1, 0)), 0, -1)


def _frame_rhs(system):
    def rhs(t, s):
        fx, jac = system.f_jac(s[:, 0])
        out = np.empty_like(s)
        out[:, 0] = fx
        out[:, 1] = jac @ s[:, 1]
        out[:, 2:] = -jac.T @ s[:, 2:]
        return out
    return rhs


def adjoint_frame(cycle: Cycle, zhat_perturbation=None, verify: bool = True,
                  rtol: float | None = None, atol: float | None = None) -> AdjointFrame:
    """Integrate x, yhat, ztil, zhat together over ``[-T, 2T]``.

    ``zhat_perturbation`` is added to zhat(0) (used to exercise the Perron
    check).  With ``verify`` the Perron pairings must hold to 1e-6.
    """
    rtol = cycle.rtol if rtol is None else rtol
    atol = cycle.atol if atol is None else atol
    x0 = cycle.x(0.0)
    v = cycle.system.f_val(x0)
    n2 = float(v @ v)
    init = {
        "x": x0,
        "yhat": perp(v) / n2,
        "ztil": perp(v),
        "zhat": v / n2,
    }
    if zhat_perturbation is not None:
        init["zhat"] = init["zhat"] + np.asarray(zhat_perturbation, dtype=float)
    s0 = np.stack([init["x"], init["yhat"], init["ztil"], init["zhat"]], axis=1)
    rhs = _frame_rhs(cycle.system)
    fwd = integrate_adaptive(rhs, s0, (0.0, 2 * cycle.T), rtol, atol)
    bwd = integrate_adaptive(rhs, s0, (0.0, -cycle.T), rtol, atol)
    frame = AdjointFrame(cycle, bwd.join(fwd), init)
    if verify:
        d = perron_defect(frame)
        if d > 1e-6:
            raise FrameError(f"Perron pairings drift by {d:.3e}; integration failed")
    return frame


_EXPECTED = {"ztil.xdot": 0.0, "ztil.yhat": 1.0, "zhat.xdot": 1.0, "zhat.yhat": 0.0}


def perron_pairings(frame: AdjointFrame, ts) -> dict:
    xd = frame.xdot(ts)
    yh, zt, zh = frame.yhat(ts), frame.ztil(ts), frame.zhat(ts)
    dot = lambda a, b: np.sum(a * b, axis=-1)
    return {
        "ztil.xdot": dot(zt, xd), "ztil.yhat": dot(zt, yh),
        "zhat.xdot": dot(zh, xd), "zhat.yhat": dot(zh, yh),
    }


def perron_defect(frame: AdjointFrame, n: int = 256) -> float:
    """Largest deviation of the four pairings from their exact values.

    The pairings are constant in t, and the initial data fixes the
    constants to (0, 1, 1, 0); both facts are checked at once.
    """
    ts = np.linspace(-frame.T, 2 * frame.T, n)
    pairs = perron_pairings(frame, ts)
    return float(max(np.max(np.abs(pairs[k] - _EXPECTED[k])) for k in _EXPECTED))


def symmetry_form_defect(frame: AdjointFrame, n: int = 256) -> tuple[float, float]:
    """Deviation from zhat = (yhat2, -yhat1) and ztil = (-x'2, x'1) on [0, T]."""
    ts = np.linspace(0.0, frame.T, n)
    yh = frame.yhat(ts)
    xd = frame.xdot(ts)
    d_hat = np.max(np.linalg.norm(frame.zhat(ts) - np.stack([yh[:, 1], -yh[:, 0]], 1), axis=1))
    d_til = np.max(np.linalg.norm(frame.ztil(ts) - np.stack([-xd[:, 1], xd[:, 0]], 1), axis=1))
    return float(d_hat), float(d_til)


def lemma1_defect(cycle: Cycle, frame: AdjointFrame | None = None,
                  mono: Monodromy | None = None, n: int = 256) -> float:
    """max over [0, T] of |yhat(t+T) - yhat(t) - (yhat2(T)/x'2(0)) x'(t)|.

    Evaluated on the cycle restarted where x'1 vanishes.
    """
    mono = mono or monodromy(cycle)
    if not mono.double_unit:
        raise FrameError(f"needs a double multiplier +1, monodromy is {mono.classification}")
    shifted = rephase(cycle, component=0)
    if frame is None or frame.cycle is not shifted:
        frame = adjoint_frame(shifted)
    T = shifted.T
    ts = np.linspace(0.0, T, n)
    c = frame.yhat(T)[1] / frame.xdot(0.0)[1]
    resid = frame.yhat(ts + T) - frame.yhat(ts) - c * frame.xdot(ts)
    return float(np.max(np.linalg.norm(resid, axis=1)))
