"""Planar systems x' = f(x) + eps*g(t, x) and the built-in examples."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping

import numpy as np

from . import expr as ex

__all__ = [
    "ConfigError", "PlanarSystem", "SymmetryReport", "BUILTINS",
    "builtin", "load_system", "make_system", "jacobian_f", "check_symmetry",
]

STATE_VARS = ("x1", "x2")
RESERVED = ("t", "x1", "x2")


class ConfigError(ValueError):
    pass


def _broadcast(values, shape):
    try:
        out = np.array(values, dtype=float)
        if out.shape[1:] == shape:
            return out
    except ValueError:
        pass
    out = np.empty((len(values),) + shape)
    for i, v in enumerate(values):
        out[i] = v
    return out


def _broadcast2(rows, shape):
    out = np.empty((len(rows), len(rows[0])) + shape)
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            out[i, j] = v
    return out


@dataclass(frozen=True)
class PlanarSystem:
    """Generating field ``f``, perturbation ``g`` and perturbation period ``T``.

    ``f`` and ``g`` hold parameter-substituted trees; ``params`` is kept for
    reporting.  ``cycle_start`` optionally records a point on the generating
    cycle together with its period.
    """

    name: str
    f: tuple
    g: tuple
    T: float
    params: Mapping[str, float] = field(default_factory=dict)
    cycle_start: tuple | None = None
    cycle_period: float | None = None
    source: Mapping = field(default_factory=dict, compare=False)

    @cached_property
    def _f_code(self):
        return ex.compile_function(self.f, STATE_VARS, wrt=STATE_VARS)

    @cached_property
    def _g_code(self):
        return ex.compile_function(self.g, ("t",) + STATE_VARS, wrt=STATE_VARS)

    @cached_property
    def g_smooth(self) -> bool:
        """False when g has a kink in the state variables (pos/neg/abs...)."""
        return not any(ex.uses_nonsmooth(e, STATE_VARS) for e in self.g)

    @cached_property
    def g_is_zero(self) -> bool:
        return all(isinstance(e, ex.Const) and e.value == 0.0 for e in self.g)

    def f_val(self, x):
        x = np.asarray(x, dtype=float)
        vals, _ = self._f_code(x[0], x[1])
        return _broadcast(vals, x.shape[1:])

    def f_jac(self, x):
        """Return ``(f(x), f'(x))`` with the Jacobian shaped ``(2, 2, ...)``."""
        x = np.asarray(x, dtype=float)
        vals, jac = self._f_code(x[0], x[1])
        shape = x.shape[1:]
        return _broadcast(vals, shape), _broadcast2(jac, shape)

    def g_val(self, t, x):
        x = np.asarray(x, dtype=float)
        vals, _ = self._g_code(t, x[0], x[1])
        shape = np.broadcast_shapes(np.shape(t), x.shape[1:])
        return _broadcast(vals, shape)

    def g_jac(self, t, x):
        x = np.asarray(x, dtype=float)
        vals, jac = self._g_code(t, x[0], x[1])
        shape = np.broadcast_shapes(np.shape(t), x.shape[1:])
        return _broadcast(vals, shape), _broadcast2(jac, shape)

    def rhs(self, eps: float = 0.0):
        """Right-hand side ``(t, x) -> f(x) + eps*g(t, x)`` for states ``(2, ...)``."""
        if eps == 0.0 or self.g_is_zero:
            return lambda t, x: self.f_val(x)
        return lambda t, x: self.f_val(x) + eps * self.g_val(t, x)

    def with_g(self, g_exprs, name: str | None = None) -> "PlanarSystem":
        g = tuple(ex.parse(s) if isinstance(s, str) else s for s in g_exprs)
        g = tuple(ex.substitute(e, self.params) for e in g)
        return PlanarSystem(name or self.name, self.f, g, self.T, dict(self.params),
                            self.cycle_start, self.cycle_period, self.source)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "f": [ex.to_string(e) for e in self.f],
            "g": [ex.to_string(e) for e in self.g],
            "params": {k: float(v) for k, v in sorted(self.params.items())},
            "T": self.T,
        }


def make_system(name: str, f, g, T: float, params: Mapping[str, float] | None = None,
                cycle_start=None, cycle_period=None, check_periodic: bool = True,
                source=None) -> PlanarSystem:
    """Parse, validate and substitute parameters."""
    params = {k: float(v) for k, v in (params or {}).items()}
    for k in params:
        if k in RESERVED:
            raise ConfigError(f"parameter name {k!r} is reserved")
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T > 0):
        raise ConfigError(f"period T must be a positive number, got {T!r}")
    if len(f) != 2 or len(g) != 2:
        raise ConfigError("f and g must each have two components")
    f_ast = tuple(ex.parse(s) if isinstance(s, str) else s for s in f)
    g_ast = tuple(ex.parse(s) if isinstance(s, str) else s for s in g)
    for i, e in enumerate(f_ast):
        free = ex.free_variables(e)
        if "t" in free:
            raise ConfigError(f"f{i + 1} depends on t; the generating system must be autonomous")
        unknown = free - set(STATE_VARS) - set(params)
        if unknown:
            raise ConfigError(f"f{i + 1} has undeclared variable(s) {sorted(unknown)}")
    for i, e in enumerate(g_ast):
        unknown = ex.free_variables(e) - set(RESERVED) - set(params)
        if unknown:
            raise ConfigError(f"g{i + 1} has undeclared variable(s) {sorted(unknown)}")
    f_ast = tuple(ex.substitute(e, params) for e in f_ast)
    g_ast = tuple(ex.substitute(e, params) for e in g_ast)
    system = PlanarSystem(name, f_ast, g_ast, float(T), params,
                          None if cycle_start is None else tuple(map(float, cycle_start)),
                          None if cycle_period is None else float(cycle_period),
                          source or {})
    if check_periodic:
        _check_periodicity(system)
    return system


def _check_periodicity(system: PlanarSystem, n: int = 16, tol: float = 1e-9) -> None:
    rng = np.random.default_rng(12345)
    ts = np.linspace(0.0, system.T, n, endpoint=False)
    xs = rng.uniform(-2.0, 2.0, size=(2, n))
    tt = np.repeat(ts, n)
    xx = np.tile(xs, (1, n))
    with np.errstate(all="ignore"):
        g0 = system.g_val(tt, xx)
        g1 = system.g_val(tt + system.T, xx)
    ok = np.isfinite(g0) & np.isfinite(g1)
    if not ok.any():
        raise ConfigError("perturbation g is not finite on the sample grid")
    defect = np.abs(g1 - g0)[ok] / (1.0 + np.abs(g0[ok]))
    if defect.max() > tol:
        raise ConfigError(
            f"g is not T-periodic with T={system.T:.12g} (max defect {defect.max():.3e})")


# ---------------------------------------------------------------- built-ins

_ROT_PARTS = ("x2*({k})", "-x1*({k})")


def _rotational(k: str):
    return tuple(p.format(k=k) for p in _ROT_PARTS)


def _mak(p):
    w = p["w"]
    if not 0 < w < 1:
        raise ConfigError("mak needs 0 < w < 1")
    return make_system("mak", _rotational("1 - x1^2 - x2^2"), ("0", "sin(w*t)"),
                       2 * math.pi / w, {"w": w}, (0.0, math.sqrt(1 - w)), 2 * math.pi / w)


def _ex2(p):
    T = 2.5 * math.pi
    return make_system("ex2", _rotational("1 - (x1^2 + x2^2)/5"),
                       ("0", "(sin(4*t/5) - x1)^3 + x1"), T, {}, (0.0, 1.0), T)


def _lin_jump(p):
    T = 2 * math.pi
    return make_system("lin_jump", ("x2", "-x1"),
                       ("0", "mu*pos(x1) + nu*neg(x1) + cos(t)"), T,
                       {"mu": p["mu"], "nu": p["nu"]}, (0.0, 1.0), T)


@lru_cache(maxsize=16)
def _duffing_amplitude(delta: float) -> float:
    """u(0) > 0 of the orbit of u'' + u + u^3 = 0 with period 2pi/(1+delta), u'(0) = 0."""
    from .cycle import find_cycle_with_period

    T = 2 * math.pi / (1 + delta)
    base = make_system("duffing", ("x2", "-x1 - x1^3"), ("0", "0"), T, {})
    return float(find_cycle_with_period(base, "x2=0", T, (1e-3, 2.0)).meta["amplitude"])


def _duffing_jump(p):
    delta = p["delta"]
    if delta <= 0:
        raise ConfigError("duffing_jump needs delta > 0 (period below 2*pi)")
    T = 2 * math.pi / (1 + delta)
    a = _duffing_amplitude(delta)
    return make_system(
        "duffing_jump", ("x2", "-x1 - a2*x1^3"),
        ("0", "cos(om*t)/a + mu*pos(x1) + nu*neg(x1)"), T,
        {"mu": p["mu"], "nu": p["nu"], "delta": delta, "a": a, "a2": a * a, "om": 1 + delta},
        (1.0, 0.0), T)


def _yag(p):
    power = p["p"]
    if power != int(power) or power < 1:
        raise ConfigError("yag needs a positive integer p")
    T = 2 * math.pi
    return make_system("yag", _rotational("(x1^2 + x2^2 - 2)^p/4 + 1"), ("0", "sin(t)"), T,
                       {"p": float(int(power))}, (0.0, math.sqrt(2.0)), T)


BUILTINS = {
    "mak": (("w",), _mak, "x' = (x2, -x1)(1 - |x|^2) + eps(0, sin wt); cycle radius sqrt(1-w)"),
    "ex2": ((), _ex2, "x' = (x2, -x1)(1 - |x|^2/5) + eps(0, (sin(4t/5) - x1)^3 + x1)"),
    "lin_jump": (("mu", "nu"), _lin_jump, "harmonic oscillator with jumping forcing"),
    "duffing_jump": (("mu", "nu", "delta"), _duffing_jump,
                     "rescaled Duffing oscillator with jumping forcing, T = 2pi/(1+delta)"),
    "yag": (("p",), _yag, "degenerate cycle of radius sqrt(2) at a critical period"),
}


def builtin(name: str, params: Mapping[str, float] | None = None) -> PlanarSystem:
    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}")
    needed, factory, _ = BUILTINS[name]
    params = dict(params or {})
    missing = [k for k in needed if k not in params]
    if missing:
        raise ConfigError(f"builtin {name!r} missing parameter(s) {missing}")
    extra = sorted(set(params) - set(needed))
    if extra:
        raise ConfigError(f"builtin {name!r} does not take parameter(s) {extra}")
    sys_ = factory({k: float(v) for k, v in params.items()})
    object.__setattr__(sys_, "source", {"builtin": name, "params": params})
    return sys_


def load_system(config: Mapping) -> PlanarSystem:
    """Build a system from the ``"system"`` block of a config (or the block itself)."""
    block = config.get("system", config) if isinstance(config, Mapping) else None
    if not isinstance(block, Mapping):
        raise ConfigError("config must be an object with a 'system' entry")
    if "builtin" in block:
        if any(k in block for k in ("f", "g", "T")):
            raise ConfigError("system must be either a builtin or inline expressions, not both")
        params = block.get("params", {})
        if not isinstance(params, Mapping):
            raise ConfigError("system.params must be an object")
        return builtin(block["builtin"], params)
    for key in ("f", "g", "T"):
        if key not in block:
            raise ConfigError(f"inline system needs {key!r}")
    f, g = block["f"], block["g"]
    if not (isinstance(f, list) and isinstance(g, list)
            and all(isinstance(s, str) for s in f + g)):
        raise ConfigError("system.f and system.g must be lists of two expression strings")
    params = block.get("params", {})
    if not isinstance(params, Mapping) or not all(
            isinstance(v, (int, float)) for v in params.values()):
        raise ConfigError("system.params must map names to numbers")
    try:
        return make_system(block.get("name", "inline"), f, g, block["T"], params,
                           source=dict(block))
    except ex.ExprSyntaxError as err:
        raise ConfigError(f"expression syntax error: {err}") from err


def jacobian_f(system: PlanarSystem, xi) -> np.ndarray:
    """f'(xi) column by column from dual-number evaluation."""
    env = {"x1": float(xi[0]), "x2": float(xi[1])}
    jac = np.empty((2, 2))
    for j, var in enumerate(STATE_VARS):
        for i, e in enumerate(system.f):
            jac[i, j] = ex.evaluate_dual(e, env, {var: 1.0})[1]
    return jac


@dataclass(frozen=True)
class SymmetryReport:
    residuals: tuple
    tol: float

    @property
    def verdicts(self) -> tuple:
        return tuple(r <= self.tol for r in self.residuals)

    @property
    def all(self) -> bool:
        return all(self.verdicts)


def check_symmetry(system: PlanarSystem, n_samples: int = 256, tol: float = 1e-10,
                   seed: int = 0) -> SymmetryReport:
    """Residuals of the reflection symmetry x1 -> -x1 and zero divergence.

    (m1) f1 even in x1, (m2) f2 odd in x1, (m3) d f1/dx1 + d f2/dx2 = 0.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    xi = rng.uniform(-2.0, 2.0, size=(2, n_samples))
    mirror = xi * np.array([[-1.0], [1.0]])
    fv, jac = system.f_jac(xi)
    fm = system.f_val(mirror)
    m1 = float(np.max(np.abs(fv[0] - fm[0])))
    m2 = float(np.max(np.abs(fv[1] + fm[1])))
    m3 = float(np.max(np.abs(jac[0, 0] + jac[1, 1])))
    return SymmetryReport((m1, m2, m3), tol)
