import math

import numpy as np
import pytest

from cycleindex import expr as ex
from cycleindex.system import BUILTINS, builtin

BUILTIN_PARAMS = {"mak": {"w": 0.8}, "ex2": {}, "lin_jump": {"mu": 1.0, "nu": 0.5},
                  "duffing_jump": {"mu": 0.0, "nu": 0.0, "delta": 0.05}, "yag": {"p": 3}}


def ev(text, **env):
    return ex.evaluate(ex.parse(text), env)


def test_free_variables():
    assert ex.free_variables(ex.parse("sin(w*t)")) == {"w", "t"}


def test_mak_component_parses():
    ast = ex.parse("x2*(1-x1^2-x2^2)")
    assert ex.free_variables(ast) == {"x1", "x2"}
    assert ev("x2*(1-x1^2-x2^2)", x1=0.0, x2=1.0) == 0.0


def test_arithmetic_and_precedence():
    assert ev("2+3*4") == 14
    assert ev("2^3^2") == 512  # right associative
    assert ev("-2^2") == -4
    assert ev("(1-2)-3") == -4
    assert ev("8/2/2") == 2
    assert ev("2*-3") == -6


def test_jumping_forcing_substitution():
    assert ev("mu*pos(x1)+nu*neg(x1)+cos(t)", mu=1, nu=0, x1=0.5, t=0) == pytest.approx(1.5)


def test_pos_neg_definitions():
    assert ev("pos(x1)", x1=-3.0) == 0.0
    assert ev("neg(x1)", x1=-3.0) == 3.0
    rng = np.random.default_rng(0)
    for a in rng.normal(scale=5, size=200):
        p, n = ev("pos(a)", a=a), ev("neg(a)", a=a)
        assert p >= 0 and n >= 0 and p * n == 0
        assert p - n == pytest.approx(a)


@pytest.mark.parametrize("text,offset", [("2x", 1), ("1+", 2), ("sin(x1", 6),
                                         ("(1+2))", 5), ("3 $ 4", 2)])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse(text)
    assert info.value.offset == offset


def test_empty_and_unknown_function():
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("   ")
    with pytest.raises(ex.ExprError):
        ev("foo(1)")


def test_case_sensitive_and_unbound():
    with pytest.raises(ex.UnboundVariableError):
        ev("X1", x1=1.0)


@pytest.mark.parametrize("text,env", [
    ("ln(x)", {"x": 0.0}), ("sqrt(x)", {"x": -1.0}), ("1/x", {"x": 0.0}),
    ("exp(x)", {"x": 1e4}), ("x^0.5", {"x": -2.0}), ("x^-1", {"x": 0.0}),
])
def test_domain_errors(text, env):
    with pytest.raises(ex.ExprDomainError):
        ev(text, **env)


def test_dual_examples():
    assert ex.evaluate_dual(ex.parse("x1^2"), {"x1": 3.0}, {"x1": 1.0}) == (9.0, 6.0)
    v, d = ex.evaluate_dual(ex.parse("sin(x1)*x2"), {"x1": 0.0, "x2": 2.0}, {"x1": 1.0})
    assert v == 0.0 and d == pytest.approx(2.0)


@pytest.mark.parametrize("fn", ["abs", "pos"])
def test_kink_takes_right_branch(fn):
    _, d = ex.evaluate_dual(ex.parse(f"{fn}(x)"), {"x": 0.0}, {"x": 1.0})
    assert d == 1.0
    _, d = ex.evaluate_dual(ex.parse("neg(x)"), {"x": 0.0}, {"x": 1.0})
    assert d == 0.0


def _random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        return rng.choice(["x", "y", f"{rng.uniform(0.2, 2):.3f}"])
    kind = rng.integers(0, 8)
    a = _random_expr(rng, depth - 1)
    b = _random_expr(rng, depth - 1)
    return [f"({a}+{b})", f"({a}-{b})", f"({a}*{b})", f"sin({a})", f"cos({a})",
            f"exp(sin({a}))", f"({a})^2", f"({a})/(2+cos({b}))"][kind]


def test_dual_against_central_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(1000):
        ast = ex.parse(_random_expr(rng, 4))
        x, y = rng.uniform(-1.5, 1.5, size=2)
        tx, ty = rng.normal(size=2)
        v, d = ex.evaluate_dual(ast, {"x": x, "y": y}, {"x": tx, "y": ty})
        fp = ex.evaluate(ast, {"x": x + h * tx, "y": y + h * ty})
        fm = ex.evaluate(ast, {"x": x - h * tx, "y": y - h * ty})
        assert abs(d - (fp - fm) / (2 * h)) <= 1e-6 * (1 + abs(v)) * max(1, abs(tx) + abs(ty))


def test_mak_jacobian_vs_fd():
    s = builtin("mak", {"w": 0.8})
    x0 = np.array([0.0, math.sqrt(0.2)])
    _, jac = s.f_jac(x0)
    h = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        col = (s.f_val(x0 + e) - s.f_val(x0 - e)) / (2 * h)
        assert np.max(np.abs(jac[:, j] - col)) <= 1e-7


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_print_parse_round_trip(name):
    s = builtin(name, BUILTIN_PARAMS[name])
    for e in s.f + s.g:
        once = ex.parse(ex.to_string(e))
        assert once == e
        assert ex.parse(ex.to_string(once)) == once


def test_compiled_matches_tree_walk():
    texts = ["x1*sin(t) - x2^3", "mu*pos(x1) + nu*neg(x1) + cos(t)", "max(x1, x2)/(1+abs(x2))"]
    asts = [ex.substitute(ex.parse(s), {"mu": 1.5, "nu": -0.5}) for s in texts]
    fn = ex.compile_function(asts, ("t", "x1", "x2"), wrt=("x1", "x2"))
    rng = np.random.default_rng(2)
    t, x1, x2 = rng.uniform(-2, 2, size=(3, 50))
    vals, jac = fn(t, x1, x2)
    for k in range(50):
        env = {"t": t[k], "x1": x1[k], "x2": x2[k]}
        for i, a in enumerate(asts):
            assert np.broadcast_to(vals[i], t.shape)[k] == pytest.approx(ex.evaluate(a, env),
                                                                         abs=1e-13)
            _, d = ex.evaluate_dual(a, env, {"x2": 1.0})
            assert np.broadcast_to(jac[i][1], t.shape)[k] == pytest.approx(d, abs=1e-12)


def test_compile_rejects_unbound():
    with pytest.raises(ex.UnboundVariableError):
        ex.compile_function([ex.parse("x1 + k")], ("x1",))


def test_nonsmooth_detection():
    assert ex.uses_nonsmooth(ex.parse("pos(x1)+t"), ("x1", "x2"))
    assert not ex.uses_nonsmooth(ex.parse("abs(t)*x1"), ("x1", "x2"))
