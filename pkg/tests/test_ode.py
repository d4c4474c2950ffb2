import math

import numpy as np
import pytest

from cycleindex.ode import (IntegrationError, NonFiniteError, StepUnderflowError,
                            integrate_adaptive)
from cycleindex.system import builtin


def harmonic(t, y):
    return np.array([y[1], -y[0]])


def test_harmonic_closes():
    tr = integrate_adaptive(harmonic, [0.0, 1.0], (0.0, 2 * math.pi), rtol=1e-10)
    assert np.abs(tr.y[-1] - [0.0, 1.0]).max() <= 1e-8


def test_mak_cycle_returns():
    s = builtin("mak", {"w": 0.8})
    x0 = np.array([0.0, math.sqrt(0.2)])
    tr = integrate_adaptive(s.rhs(), x0, (0.0, 2 * math.pi / 0.8))
    assert np.abs(tr.y[-1] - x0).max() <= 1e-8


def test_exponential():
    tr = integrate_adaptive(lambda t, y: y, [1.0], (0.0, 1.0))
    assert abs(tr.y[-1, 0] - math.e) <= 1e-9


def test_backward_forward():
    T = 3.0
    fwd = integrate_adaptive(harmonic, [0.3, -0.7], (0.0, T))
    back = integrate_adaptive(harmonic, fwd.y[-1], (T, 0.0))
    assert back.t[0] == 0.0 and back.t[-1] == T  # knots stored increasing
    assert np.abs(back.y[0] - [0.3, -0.7]).max() <= 100 * 1e-10


def test_dense_output():
    tr = integrate_adaptive(harmonic, [0.0, 1.0], (0.0, 2 * math.pi))
    k = len(tr.t) // 2
    assert np.array_equal(tr(tr.t[k]), tr.y[k])
    assert np.abs(tr(math.pi / 2) - [1.0, 0.0]).max() <= 1e-7
    tm = 0.5 * (tr.t[k] + tr.t[k + 1])
    again = integrate_adaptive(harmonic, [0.0, 1.0], (0.0, tm))
    assert np.abs(tr(tm) - again.y[-1]).max() <= 10 * (1e-12 + 1e-10)
    assert tr(np.linspace(0, 1, 7)).shape == (7, 2)
    with pytest.raises(ValueError):
        tr(7.0)


def test_fixed_step_fifth_order():
    errs = []
    for n in (32, 64):
        h = 2 * math.pi / n
        tr = integrate_adaptive(harmonic, [0.0, 1.0], (0.0, 2 * math.pi), 1e3, 1e3,
                                max_step=h, first_step=h)
        errs.append(np.abs(tr.y[-1] - [0.0, 1.0]).max())
    assert errs[0] / errs[1] > 25


def test_batched_state_matches_single():
    x0 = np.array([[0.0, 1.0, 2.0], [1.0, 0.5, -1.0]])
    batch = integrate_adaptive(harmonic, x0, (0.0, 1.0))
    assert batch.shape == (2, 3)
    for j in range(3):
        single = integrate_adaptive(harmonic, x0[:, j], (0.0, 1.0))
        assert np.abs(single.y[-1] - batch.y[-1][:, j]).max() <= 1e-9


def test_blow_up_raises():
    with pytest.raises(IntegrationError):
        integrate_adaptive(lambda t, y: y * y, [1.0], (0.0, 2.0))


def test_non_finite_rhs():
    with pytest.raises(NonFiniteError):
        integrate_adaptive(lambda t, y: np.array([np.nan]), [1.0], (0.0, 1.0))
    assert issubclass(StepUnderflowError, IntegrationError)


@pytest.mark.parametrize("rtol,atol", [(0.0, 1e-12), (1e-10, -1.0)])
def test_bad_tolerances(rtol, atol):
    with pytest.raises(ValueError):
        integrate_adaptive(harmonic, [0.0, 1.0], (0.0, 1.0), rtol, atol)


def test_empty_span():
    with pytest.raises(ValueError):
        integrate_adaptive(harmonic, [0.0, 1.0], (1.0, 1.0))
