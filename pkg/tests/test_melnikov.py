import math

import numpy as np
import pytest

from cycleindex.cycle import cycle_from_initial
from cycleindex.linearized import adjoint_frame
from cycleindex.melnikov import (QuadratureError, condition_a_margin, ftheta_defect,
                                 integrate_batch, melnikov_grid, melnikov_values,
                                 s_independence_defect, third_derivative, zeros_of_me)
from cycleindex.system import builtin

PI = math.pi


def _frame(name, **p):
    s = builtin(name, p)
    return adjoint_frame(cycle_from_initial(s, s.cycle_start, s.cycle_period or s.T))


@pytest.fixture(scope="module")
def mak():
    return _frame("mak", w=0.8)


@pytest.fixture(scope="module")
def mak_grid(mak):
    return melnikov_grid(mak, 64, 8)


def test_integrate_batch_basic():
    fn = lambda tau, ids: np.stack([np.sin(tau), np.cos(tau) * (ids + 1)])
    out = integrate_batch(fn, [0.0, PI, 0.0], [PI, 0.0, PI / 2])
    assert np.allclose(out[0], [2.0, -2.0, 1.0], atol=1e-12)
    assert np.allclose(out[1], [0.0, 0.0, 3.0], atol=1e-12)


def test_integrate_batch_kink():
    fn = lambda tau, ids: np.abs(tau - 0.3)[None, :]
    out = integrate_batch(fn, [0.0], [1.0], tol=1e-13)
    assert out[0, 0] == pytest.approx(0.045 + 0.245, abs=1e-12)


def test_integrate_batch_failures():
    with pytest.raises(QuadratureError), np.errstate(invalid="ignore"):
        integrate_batch(lambda tau, ids: np.log(tau - 0.5)[None, :], [0.0], [1.0])
    with pytest.raises(QuadratureError):
        integrate_batch(lambda tau, ids: np.sin(200 * tau ** 2)[None, :], [0.0], [5.0],
                        tol=1e-14, max_rounds=2)


def test_mak_closed_forms(mak, mak_grid):
    th = mak_grid.theta
    me = mak_grid.me[mak_grid.row(0.0)]
    assert np.abs(me + PI * math.sqrt(0.2) * np.sin(0.8 * th)).max() <= 1e-6
    s = np.linspace(0.0, mak.T, 9)
    ma = melnikov_values(mak, s, 0.0)[1]
    exact = PI / (0.8 ** 3 * math.sqrt(0.2)) * (0.4 * np.sin(0.8 * s) ** 2 - 1)
    assert np.abs(ma - exact).max() <= 1e-5
    # M_A genuinely depends on s here, M_E does not
    d_e, d_a = s_independence_defect(mak_grid)
    assert d_e <= 1e-6 and d_a > 1.0


def test_grid_matches_direct(mak, mak_grid):
    i, j = 3, 17
    me, ma = melnikov_values(mak, mak_grid.s[i], mak_grid.theta[j])
    assert me == pytest.approx(mak_grid.me[i, j], abs=1e-9)
    assert ma == pytest.approx(mak_grid.ma[i, j], abs=1e-9)


def test_values_domain(mak):
    with pytest.raises(ValueError):
        melnikov_values(mak, -1.0, 0.0)


def test_mak_zeros(mak_grid):
    zs = zeros_of_me(mak_grid)
    assert len(zs) == 2
    assert zs.thetas[0] == pytest.approx(0.0, abs=1e-9)
    assert zs.thetas[1] == pytest.approx(PI / 0.8, abs=1e-9)
    assert not any(z.odd_multiplicity for z in zs.zeros)


def test_zero_perturbation():
    s = builtin("mak", {"w": 0.8}).with_g(["0", "0"])
    fr = adjoint_frame(cycle_from_initial(s, s.cycle_start, s.cycle_period))
    g = melnikov_grid(fr, 16, 8)
    assert not g.me.any() and not g.ma.any()
    assert zeros_of_me(g).identically_zero
    ca = condition_a_margin(g)
    assert ca.verdict is None


def test_condition_a(mak_grid):
    ca = condition_a_margin(mak_grid)
    assert ca.verdict is True and ca.margin > 1.0
    bad = condition_a_margin(melnikov_grid(_frame("mak", w=0.4), 64, 8))
    assert bad.verdict is False
    with pytest.raises(ValueError):
        condition_a_margin(melnikov_grid(_frame("mak", w=0.4), 16, 4))


def test_averaged_field_identity_and_swap_control(mak):
    assert ftheta_defect(mak, 1.0, 2.0) <= 1e-6
    assert ftheta_defect(mak, 1.0, 2.0, swap=True) > 1e-2


def test_third_derivative_exact_on_cubic():
    assert third_derivative(lambda x: 2 * x ** 3 - x, 0.7, 0.1) == pytest.approx(12.0)


def test_quadrature_refinement(mak):
    a = melnikov_grid(mak, 32, 8)
    b = melnikov_grid(mak, 32, 8, n_init=4)
    assert np.abs(a.me - b.me).max() <= 1e-8
    assert np.abs(a.ma - b.ma).max() <= 1e-8


def test_grid_csv(tmp_path, mak_grid):
    p = tmp_path / "m.csv"
    mak_grid.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "s,theta,M_E,M_A"
    assert len(lines) == 1 + 64 * 8
