"""Adaptive Dormand-Prince 5(4) integration with cubic Hermite dense output.

The state may be an array of any shape; all components share one step
sequence.  That lets callers integrate a batch of initial conditions (or a
state together with its variational matrix) in a single pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

__all__ = [
    "IntegrationError", "StepUnderflowError", "NonFiniteError",
    "DenseTrajectory", "integrate_adaptive", "sample_trajectory",
    "DEFAULT_RTOL", "DEFAULT_ATOL", "ANALYSIS_RTOL", "ANALYSIS_ATOL",
]

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
# cycles and adjoint frames feed identities checked at 1e-7..1e-8
ANALYSIS_RTOL = 1e-12
ANALYSIS_ATOL = 1e-14


class IntegrationError(RuntimeError):
    pass


class StepUnderflowError(IntegrationError):
    def __init__(self, t: float):
        super().__init__(f"step size underflow at t={t:.12g} (possible blow-up)")
        self.t = t


class NonFiniteError(IntegrationError):
    def __init__(self, t: float):
        super().__init__(f"non-finite right-hand side at t={t:.12g}")
        self.t = t


# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                    -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass(frozen=True)
class DenseTrajectory:
    """Knots ``(t[i], y[i], dy[i])`` with ``t`` strictly increasing."""

    t: np.ndarray
    y: np.ndarray
    dy: np.ndarray

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    @property
    def shape(self) -> tuple:
        return self.y.shape[1:]

    def __call__(self, t):
        return sample_trajectory(self, t)

    def derivative(self, t):
        """Derivative of the Hermite interpolant (not the RHS)."""
        t = np.asarray(t, dtype=float)
        i, s, h = self._locate(t)
        y0, y1, d0, d1 = self._pieces(i)
        s = _expand(s, y0.ndim)
        h = _expand(h, y0.ndim)
        ds = 6 * s * (1 - s)
        return ((y1 - y0) * ds / h + d0 * (1 - 4 * s + 3 * s * s)
                + d1 * (3 * s * s - 2 * s))

    def _locate(self, t: np.ndarray):
        lo, hi = self.span
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            bad = t[(t < lo - slack) | (t > hi + slack)]
            raise ValueError(f"query time {bad.flat[0]:.12g} outside span [{lo:.12g}, {hi:.12g}]")
        t = np.clip(t, lo, hi)
        i = np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, len(self.t) - 2)
        h = self.t[i + 1] - self.t[i]
        return i, (t - self.t[i]) / h, h

    @cached_property
    def _coef(self) -> np.ndarray:
        # Horner coefficients in the local variable s in [0, 1], per interval
        n = len(self.t)
        y = self.y.reshape(n, -1)
        d = self.dy.reshape(n, -1)
        h = np.diff(self.t)[:, None]
        y0, y1 = y[:-1], y[1:]
        hd0, hd1 = h * d[:-1], h * d[1:]
        return np.ascontiguousarray(np.stack(
            [y0, hd0, 3 * (y1 - y0) - 2 * hd0 - hd1, 2 * (y0 - y1) + hd0 + hd1], axis=1))

    def _pieces(self, i):
        return self.y[i], self.y[i + 1], self.dy[i], self.dy[i + 1]

    def restrict(self, sl: slice) -> "DenseTrajectory":
        """View of selected state components (indexing the trailing axes)."""
        return DenseTrajectory(self.t, self.y[(slice(None),) + sl], self.dy[(slice(None),) + sl])

    def join(self, other: "DenseTrajectory") -> "DenseTrajectory":
        """Concatenate two trajectories meeting at a common time."""
        a, b = (self, other) if self.t[0] <= other.t[0] else (other, self)
        if abs(a.t[-1] - b.t[0]) > 1e-12 * max(1.0, abs(b.t[0])):
            raise ValueError("trajectories do not meet")
        return DenseTrajectory(
            np.concatenate([a.t, b.t[1:]]),
            np.concatenate([a.y, b.y[1:]]),
            np.concatenate([a.dy, b.dy[1:]]),
        )


def _expand(v, ndim):
    v = np.asarray(v)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim < ndim else v


def sample_trajectory(traj: DenseTrajectory, t):
    """Cubic Hermite interpolation; scalar ``t`` gives one state, arrays stack."""
    t_arr = np.asarray(t, dtype=float)
    i, s, _ = traj._locate(t_arr)
    coef = traj._coef
    flat_s = s.reshape(-1, 1)
    c = coef[i.reshape(-1)]  # (N, 4, m)
    out = ((c[:, 3] * flat_s + c[:, 2]) * flat_s + c[:, 1]) * flat_s + c[:, 0]
    return out.reshape(t_arr.shape + traj.y.shape[1:])


def _initial_step(rhs, t0, y0, f0, direction, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = rhs(t0 + direction * h0, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate_adaptive(rhs: Callable, x0, span, rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL, max_step: float | None = None,
                       first_step: float | None = None) -> DenseTrajectory:
    """Integrate ``y' = rhs(t, y)`` over ``span = (t0, t1)``.

    Backward integration is allowed (``t1 < t0``); knots are always stored
    in increasing time.  Each accepted step satisfies
    ``max |err| / (atol + rtol*|y|) <= 1``.
    """
    t0, t1 = float(span[0]), float(span[1])
    if t0 == t1:
        raise ValueError("empty integration span")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    direction = 1.0 if t1 > t0 else -1.0
    length = abs(t1 - t0)
    max_step = length if max_step is None else min(max_step, length)

    y = np.array(x0, dtype=float)
    f = np.asarray(rhs(t0, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError(t0)
    h = first_step or _initial_step(rhs, t0, y, f, direction, rtol, atol)
    h = min(h, max_step)

    ts, ys, fs = [t0], [y.copy()], [f.copy()]
    t = t0
    err_prev = 1e-4
    k = [None] * 7
    while direction * (t1 - t) > 0:
        min_h = 16 * np.spacing(abs(t)) + 1e-300
        if h < min_h:
            raise StepUnderflowError(t)
        last = h >= abs(t1 - t) * (1 - 1e-12)
        if last:
            h = abs(t1 - t)
        hs = direction * h
        k[0] = f
        for j in range(1, 7):
            acc = y.copy()
            for m, a in enumerate(_A[j]):
                if a:
                    acc += hs * a * k[m]
            k[j] = np.asarray(rhs(t + _C[j] * hs, acc), dtype=float)
        y_new = acc  # stage 7 evaluates at the 5th-order solution (FSAL)
        f_new = k[6]
        if not (np.all(np.isfinite(f_new)) and np.all(np.isfinite(y_new))):
            h *= 0.25
            if h < min_h:
                raise NonFiniteError(t)
            continue
        err_vec = hs * sum(_E[m] * k[m] for m in range(7) if _E[m])
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if err <= 1.0:
            t = t1 if last else t + hs
            y, f = y_new, f_new
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = _SAFETY * err ** (-_ALPHA) * err_prev ** _BETA
                factor = min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = max(err, 1e-4)
            h = min(h * factor, max_step)
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err ** (-1 / 5))
            h *= factor
    ts_a = np.array(ts)
    ys_a = np.array(ys)
    fs_a = np.array(fs)
    if direction < 0:
        ts_a, ys_a, fs_a = ts_a[::-1], ys_a[::-1], fs_a[::-1]
    return DenseTrajectory(ts_a, ys_a, fs_a)
