import math

import numpy as np
import pytest

from cycleindex.cycle import (CycleError, critical_period_scan, cycle_from_initial,
                              find_cycle_with_period, first_return, isolation_check, rephase)
from cycleindex.system import builtin, make_system


@pytest.fixture(scope="module")
def mak():
    s = builtin("mak", {"w": 0.8})
    return cycle_from_initial(s, s.cycle_start, s.cycle_period)


def test_mak_cycle_geometry(mak):
    r = math.sqrt(0.2)
    assert mak.closure_defect <= 1e-9
    assert mak.orientation == -1  # clockwise
    assert mak.diameter == pytest.approx(2 * r, rel=1e-4)
    assert np.abs(np.linalg.norm(mak.sample_points(64), axis=1) - r).max() <= 1e-9
    assert np.allclose(mak.x(mak.T + 0.3), mak.x(0.3), atol=1e-9)
    assert np.allclose(mak.x(7 * mak.T + 0.3), mak.x(0.3), atol=1e-9)


def test_sides_and_phase(mak):
    assert mak.side([0.0, 0.1]) == "inside"
    assert mak.side([0.0, 1.0]) == "outside"
    ph, d = mak.nearest_phase(1.1 * mak.x(1.0))
    assert ph == pytest.approx(1.0, abs=1e-7)
    assert d == pytest.approx(0.1 * math.sqrt(0.2), rel=1e-6)


def test_open_orbit_rejected():
    s = builtin("mak", {"w": 0.8})
    with pytest.raises(CycleError, match="does not close"):
        cycle_from_initial(s, s.cycle_start, 3.0)


def test_equilibrium_start_rejected():
    s = builtin("mak", {"w": 0.8})
    with pytest.raises(CycleError, match="equilibrium"):
        cycle_from_initial(s, (0.0, 1.0), 2.0)


def test_first_return_harmonic():
    s = make_system("ho", ["x2", "-x1"], ["0", "0"], 1.0)
    assert first_return(s, (0.0, 1.0), "x1=0", 20.0) == pytest.approx(2 * math.pi, abs=1e-9)


def test_duffing_shooting():
    s = builtin("duffing_jump", {"mu": 0, "nu": 0, "delta": 0.05})
    T = 2 * math.pi / 1.05
    c = find_cycle_with_period(s, "x2=0", T, (0.5, 1.5))
    assert abs(c.meta["first_return"] - T) <= 1e-9
    assert c.meta["amplitude"] == pytest.approx(1.0, abs=1e-7)  # rescaled so amplitude is 1


def test_shooting_bad_bracket():
    s = builtin("duffing_jump", {"mu": 0, "nu": 0, "delta": 0.05})
    with pytest.raises(CycleError, match="straddle"):
        find_cycle_with_period(s, "x2=0", 2 * math.pi / 1.05, (1.2, 1.5))


def test_rephase_starts_at_zero_of_component(mak):
    c = rephase(mak, component=1)
    assert abs(c.xdot(0.0)[1]) <= 1e-10


def test_yag_critical_period():
    s = builtin("yag", {"p": 2})
    alphas = math.sqrt(2) + np.linspace(-0.2, 0.2, 41)
    scan = critical_period_scan(s, alphas)
    assert np.all(np.abs(scan.critical_alpha - math.sqrt(2)) < 0.03)
    assert scan.critical.any()
    i = int(np.argmin(np.abs(alphas - math.sqrt(2))))
    assert scan.period[i] == pytest.approx(2 * math.pi, abs=1e-3)


def test_isolation(mak):
    assert isolation_check(mak).holds
    s = builtin("lin_jump", {"mu": 0, "nu": 0})
    centre = cycle_from_initial(s, s.cycle_start, s.T)
    chk = isolation_check(centre)
    assert not chk.holds
    assert max(chk.defects) <= 1e-9
