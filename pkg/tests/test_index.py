import math

import numpy as np
import pytest

from cycleindex.cycle import cycle_from_initial
from cycleindex.index import (IndexError_, VanishingFieldError, analt_predict, phi_curve,
                              theorem_verdict, winding_number)
from cycleindex.linearized import adjoint_frame
from cycleindex.melnikov import ConditionA, Zero, ZeroSet, melnikov_grid
from cycleindex.pipeline import run_analysis
from cycleindex.system import builtin


def circle(n, k=1, phase=0.0):
    t = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.stack([np.cos(k * t + phase), np.sin(k * t + phase)], 1)


@pytest.mark.parametrize("k", [-2, -1, 0, 1, 3])
def test_winding_of_rotations(k):
    vec = circle(256, k) if k else np.tile([1.0, 0.0], (256, 1))
    rep = winding_number(vec)
    assert rep.index == k and rep.admissible
    assert rep.residual <= 1e-9


def test_invariant_under_rescaling_and_homotopy():
    base = circle(400, 2)
    t = np.linspace(0, 2 * math.pi, 400, endpoint=False)
    scaled = base * (2 + np.sin(3 * t))[:, None]
    wobbly = base + 0.4 * np.stack([np.cos(5 * t), np.sin(7 * t)], 1)
    assert winding_number(scaled).index == 2
    assert winding_number(wobbly).index == 2


def test_coarse_array_is_flagged():
    rep = winding_number(circle(6, 2))
    assert not rep.admissible


def test_sampler_refines():
    rep = winding_number(lambda n: circle(n, 5), n0=8)
    assert rep.index == 5 and rep.admissible and rep.depth >= 2


def test_refinement_budget():
    with pytest.raises(IndexError_):
        winding_number(lambda n: circle(n, 5), n0=8, max_points=16)


def test_vanishing_field_raises():
    vec = circle(64)
    vec[10] = 0.0
    with pytest.raises(VanishingFieldError):
        winding_number(vec)


def _zeros(*thetas, slope=1.0):
    return ZeroSet(tuple(Zero(t, (t, t), slope, False, 0.0) for t in thetas), False, 1.0)


def test_analt_cases():
    assert analt_predict(_zeros(0.0, 3.0), [-1.0, 2.0]).prediction == (0, 2)
    assert analt_predict(_zeros(0.0, 3.0), [1.0, 2.0]).prediction is None
    three = analt_predict(_zeros(0.0, 1.0, 2.0), [1.0, -1.0, 1.0])
    assert three.prediction is None and "3 zeros" in three.reason
    flat = analt_predict(_zeros(0.0, 3.0, slope=0.0), [-1.0, 1.0])
    assert flat.prediction is None


def _cond(ok):
    return ConditionA(ok, 1.0 if ok else 0.0, 1.0, 1e-6, None, [])


def test_verdict_logic():
    zs = _zeros(0.0, 3.0)
    rep = winding_number(np.tile([1.0, 0.0], (64, 1)))
    v = theorem_verdict(_cond(True), rep, False, zs, [-1.0, 1.0])
    assert v.status == "theorem_t1: applies" and v.applies
    assert v.stability["saddles"]["side"] == "inside"
    assert v.stability["mu"] == 1
    v = theorem_verdict(_cond(False), rep, False, zs, [-1.0, 1.0])
    assert v.status == "hypotheses fail: condition_A failed" and not v.applies
    v = theorem_verdict(_cond(True), rep, False, zs, [-1.0, 1.0], condition_c=False)
    assert v.status == "hypotheses fail: condition_C failed"
    one = winding_number(circle(64))
    v = theorem_verdict(_cond(True), one, False, zs, [-1.0, 1.0])
    assert not v.applies and "non-crossing only" in v.status
    v = theorem_verdict(_cond(True), winding_number(circle(64, 3)), True, _zeros(0.0), [1.0])
    assert v.theorem == "theorem_t1d" and v.stability["saddles"]["side"] == "outside"
    assert theorem_verdict(_cond(None), rep, False, zs, [1.0, 1.0]).status.endswith(
        "unverifiable")
    with pytest.raises(ValueError):
        analt_predict(zs, [1.0])


def _analysis(name, **p):
    s = builtin(name, p)
    c = cycle_from_initial(s, s.cycle_start, s.cycle_period or s.T)
    return run_analysis(s, c, 128, 8)


@pytest.fixture(scope="module")
def mak08():
    return _analysis("mak", w=0.8)


def test_mak_pipeline(mak08):
    assert mak08.phi.reversed  # clockwise cycle
    assert mak08.index.index == 0
    assert mak08.verdict.status == "theorem_t1: applies"


def test_mak_phi_does_not_vanish(mak08):
    assert mak08.phi.min_norm > 0.1
    assert mak08.index.admissible


def test_mak_outside_window_fails():
    an = _analysis("mak", w=0.4)
    assert an.verdict.status == "hypotheses fail: condition_A failed"


def test_yag_uses_t2():
    an = _analysis("yag", p=3)
    assert an.verdict.theorem == "theorem_t2"
    assert an.verdict.analt.prediction == (0, 2)
    assert an.verdict.applies


def test_lin_jump_is_not_isolated():
    an = _analysis("lin_jump", mu=0, nu=0)
    assert an.isolated is False
    assert an.verdict.status == "hypotheses fail: condition_C failed"


def test_phi_csv(tmp_path, mak08):
    p = tmp_path / "phi.csv"
    mak08.phi.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "theta,Phi1,Phi2,norm"
    assert len(rows) == 129


def test_phi_vanishes_for_zero_forcing():
    s = builtin("mak", {"w": 0.8}).with_g(["0", "0"])
    fr = adjoint_frame(cycle_from_initial(s, s.cycle_start, s.cycle_period))
    with pytest.raises(VanishingFieldError):
        winding_number(phi_curve(melnikov_grid(fr, 16, 8)))
