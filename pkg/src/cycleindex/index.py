"""The field Phi = M_E * perp(x') + M_A * x' on the cycle, its index, and verdicts."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import winding_sum
from .linearized import perp
from .melnikov import ConditionA, MelnikovGrid, ZeroSet, melnikov_values

__all__ = [
    "IndexError_", "VanishingFieldError", "PhiCurve", "IndexReport", "phi_curve",
    "phi_sampler", "winding_number", "analt_predict", "AnaltResult", "VerdictReport",
    "theorem_verdict",
]

MAX_POINTS = 2 ** 20


class IndexError_(RuntimeError):
    pass


class VanishingFieldError(IndexError_):
    pass


@dataclass(frozen=True)
class PhiCurve:
    """Phi sampled along the cycle, stored in positively oriented order."""

    theta: np.ndarray
    vectors: np.ndarray
    reversed: bool
    sampler: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.vectors, axis=1)

    @property
    def min_norm(self) -> float:
        return float(self.norms.min())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "Phi1", "Phi2", "norm"])
            for th, v, n in zip(self.theta, self.vectors, self.norms):
                w.writerow([repr(float(th)), repr(float(v[0])), repr(float(v[1])), repr(float(n))])


def _assemble(me, ma, xdot):
    return me[:, None] * perp(xdot) + ma[:, None] * xdot


def phi_sampler(grid: MelnikovGrid, s: float = 0.0) -> Callable[[int], np.ndarray]:
    """``n -> Phi`` at n equispaced phases, positively oriented, by direct quadrature."""
    frame = grid.frame
    T = frame.T
    rev = frame.cycle.orientation < 0

    def sample(n: int) -> np.ndarray:
        th = np.linspace(0.0, T, n, endpoint=False)
        me, ma = melnikov_values(frame, s, th, grid.tol)
        v = _assemble(me, ma, frame.xdot(th))
        return v[::-1] if rev else v
    return sample


def phi_curve(grid: MelnikovGrid, s: float = 0.0) -> PhiCurve:
    """Phi from one grid row; traversal reversed when the cycle runs clockwise."""
    i = grid.row(s)
    frame = grid.frame
    th = grid.theta
    v = _assemble(grid.me[i], grid.ma[i], frame.xdot(th))
    rev = frame.cycle.orientation < 0
    if rev:
        th, v = th[::-1], v[::-1]
    return PhiCurve(th.copy(), v.copy(), rev, phi_sampler(grid, s))


@dataclass(frozen=True)
class IndexReport:
    index: int
    admissible: bool
    depth: int
    n_points: int
    min_norm: float
    residual: float
    max_increment: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _measure(vectors):
    vectors = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(vectors, axis=1)
    scale = float(norms.max()) if norms.size else 0.0
    if scale == 0.0 or norms.min() <= 1e-12 * scale:
        raise VanishingFieldError("field vanishes on the curve; index undefined")
    total, worst = winding_sum(vectors)
    return total, worst, float(norms.min())


def winding_number(curve, n0: int | None = None, max_points: int = MAX_POINTS) -> IndexReport:
    """Winding number of a closed vector sequence.

    ``curve`` is an array ``(n, 2)``, a :class:`PhiCurve`, or a callable
    ``n -> (n, 2)``.  Callables (and PhiCurves carrying a sampler) are
    refined by doubling until every angle step is below pi/2.
    """
    sampler = None
    if isinstance(curve, PhiCurve):
        vectors, sampler = curve.vectors, curve.sampler
    elif callable(curve):
        sampler = curve
        vectors = sampler(n0 or 256)
    else:
        vectors = np.asarray(curve, dtype=float)
    depth = 0
    total, worst, mn = _measure(vectors)
    while worst >= math.pi / 2 and sampler is not None:
        n = 2 * len(vectors)
        if n > max_points:
            raise IndexError_(f"admissibility not reached with {max_points} points")
        vectors = sampler(n)
        depth += 1
        total, worst, mn = _measure(vectors)
    k = int(round(total))
    resid = abs(total - k)
    return IndexReport(k, bool(worst < math.pi / 2 and resid <= 1e-6), depth, len(vectors),
                       mn, float(resid), float(worst))


@dataclass(frozen=True)
class AnaltResult:
    prediction: tuple | None  # (0, 2) or None when inconclusive
    reason: str
    zeros: tuple = ()
    ma_at_zeros: tuple = ()

    def to_dict(self):
        return {"prediction": None if self.prediction is None else list(self.prediction),
                "reason": self.reason, "zeros": list(self.zeros),
                "M_A_at_zeros": list(self.ma_at_zeros)}


def analt_predict(zeros: ZeroSet, ma_at_zeros, slope_tol: float = 1e-6) -> AnaltResult:
    """Exactly two strictly monotone zeros with opposite M_A signs give {0, 2}.

    A zero counts as strictly monotone if its slope exceeds ``slope_tol``
    times the row scale, or if it is a flat zero at which M_E still
    changes sign (odd multiplicity).
    """
    ma = tuple(float(v) for v in ma_at_zeros)
    ths = tuple(zeros.thetas)
    if len(ma) != len(ths):
        raise ValueError(f"{len(ma)} M_A values for {len(ths)} zeros")
    if zeros.identically_zero:
        return AnaltResult(None, "M_E vanishes identically", ths, ma)
    if len(zeros) != 2:
        return AnaltResult(None, f"M_E has {len(zeros)} zeros, not 2", ths, ma)
    for z in zeros.zeros:
        if abs(z.slope) <= slope_tol * zeros.scale and not z.odd_multiplicity:
            return AnaltResult(None, f"zero at {z.theta:.6g} is not strictly monotone", ths, ma)
    if ma[0] * ma[1] >= 0:
        return AnaltResult(None, "M_A does not change sign between the zeros", ths, ma)
    return AnaltResult((0, 2), "two monotone zeros, M_A of opposite signs", ths, ma)


@dataclass(frozen=True)
class VerdictReport:
    theorem: str | None
    status: str
    applies: bool
    hypotheses: dict
    index: int | None
    analt: AnaltResult | None
    conclusions: dict
    stability: dict | None

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "status": self.status,
            "applies": self.applies,
            "hypotheses": self.hypotheses,
            "index": self.index,
            "analt": None if self.analt is None else self.analt.to_dict(),
            "conclusions": self.conclusions,
            "stability": self.stability,
        }


def _stability(index: int) -> dict | None:
    if index == 1:
        return None
    mu = abs(index - 1)
    saddles, nodes = ("outside", "inside") if index > 1 else ("inside", "outside")
    return {"mu": mu, "saddles": {"side": saddles, "at_least": mu},
            "nodes_or_foci": {"side": nodes, "at_least": mu}}


def theorem_verdict(condition_a: ConditionA, index_report: IndexReport | None,
                    degenerate: bool, zeros: ZeroSet, ma_at_zeros=(),
                    condition_c: bool | None = None) -> VerdictReport:
    """Decide which existence theorem fires and what it predicts.

    Non-degenerate cycles use the general theorem (t1).  Degenerate cycles
    use t2 when M_E has exactly two zeros with M_A of opposite signs and
    otherwise the degenerate form of the general theorem (t1d).
    """
    analt = analt_predict(zeros, ma_at_zeros) if not zeros.identically_zero else None
    index = index_report.index if index_report is not None and index_report.admissible else None
    hyp = {
        "condition_A": condition_a.verdict,
        "condition_A_margin": condition_a.margin,
        "condition_B": None if index is None else index != 1,
        "condition_C": condition_c,
        "degenerate": bool(degenerate),
    }
    phases = [float(t) for t in zeros.thetas]
    if condition_c is False:
        return VerdictReport(None, "hypotheses fail: condition_C failed", False, hyp, index,
                             analt, {}, None)
    if condition_a.verdict is None:
        return VerdictReport(None, "hypotheses fail: condition_A unverifiable", False, hyp,
                             index, analt, {}, None)
    if not condition_a.verdict:
        return VerdictReport(None, "hypotheses fail: condition_A failed", False, hyp, index,
                             analt, {}, None)
    if degenerate and analt is not None and len(zeros) == 2:
        name = "theorem_t2"
        exists = analt.prediction is not None
    else:
        name = "theorem_t1d" if degenerate else "theorem_t1"
        exists = index is not None and index != 1
    conclusions = {"non_crossing": True, "at_least_two_solutions": exists}
    if exists:
        conclusions["sides"] = ["inside", "outside"]
        conclusions["limit_phases"] = phases
    stab = _stability(index) if (exists and index is not None) else None
    status = f"{name}: applies" if exists else f"{name}: non-crossing only (index is 1)"
    if exists is False and index is None:
        status = f"{name}: non-crossing only (index undetermined)"
    return VerdictReport(name, status, exists, hyp, index, analt, conclusions, stab)
