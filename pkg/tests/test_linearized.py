import math

import numpy as np
import pytest

from cycleindex.cycle import cycle_from_initial
from cycleindex.linearized import (FrameError, adjoint_frame, lemma1_defect, liouville_defect,
                                   monodromy, perp, perron_defect, symmetry_form_defect,
                                   tangent_solution_defect)
from cycleindex.system import builtin, make_system

CASES = {"mak": {"w": 0.8}, "ex2": {}, "yag": {"p": 2}, "lin_jump": {"mu": 0, "nu": 0},
         "duffing_jump": {"mu": 0, "nu": 0, "delta": 0.05}}


def _cycle(name):
    s = builtin(name, CASES[name])
    return cycle_from_initial(s, s.cycle_start, s.cycle_period or s.T)


@pytest.fixture(scope="module")
def cycles():
    return {name: _cycle(name) for name in CASES}


@pytest.mark.parametrize("name,cls", [("mak", "C_ME"), ("ex2", "C_ME"), ("yag", "degenerate"),
                                      ("lin_jump", "degenerate"), ("duffing_jump", "C_ME")])
def test_classification(cycles, name, cls):
    m = monodromy(cycles[name])
    assert m.classification == cls
    assert m.double_unit
    assert abs(m.det - m.liouville_det) <= 1e-9


def test_mak_shear_value(cycles):
    # neighbouring circles of radius r have period 2pi/(1-r^2)
    Y = monodromy(cycles["mak"]).Y
    assert abs(Y[0, 1]) == pytest.approx(math.pi, rel=1e-6)


def test_hyperbolic_cycle_classification():
    # van der Pol-like isolated cycle x' = (x2, -x1) + (x1, x2)(1 - r^2)
    s = make_system("ring", ["x2 + x1*(1 - x1^2 - x2^2)", "-x1 + x2*(1 - x1^2 - x2^2)"],
                    ["0", "0"], 2 * math.pi)
    c = cycle_from_initial(s, (0.0, 1.0), 2 * math.pi)
    m = monodromy(c)
    assert m.classification == "C_MA"
    assert sorted(abs(z) for z in m.multipliers)[0] == pytest.approx(math.exp(-4 * math.pi),
                                                                     rel=1e-5)
    with pytest.raises(FrameError):
        lemma1_defect(c, mono=m)


def test_liouville_and_tangent(cycles):
    for c in cycles.values():
        assert liouville_defect(c) <= 1e-9
        assert tangent_solution_defect(c) <= 1e-8


def test_perp():
    assert np.array_equal(perp(np.array([1.0, 2.0])), [-2.0, 1.0])


def test_perron_all_builtins(cycles):
    for c in cycles.values():
        assert perron_defect(adjoint_frame(c)) <= 1e-8


def test_corrupted_zhat_is_caught(cycles):
    c = cycles["mak"]
    bad = adjoint_frame(c, zhat_perturbation=(1e-3, 0.0), verify=False)
    assert perron_defect(bad) > 1e-4
    with pytest.raises(FrameError):
        adjoint_frame(c, zhat_perturbation=(1e-3, 0.0))


def test_symmetric_frame_form(cycles):
    fr = adjoint_frame(cycles["mak"])
    assert max(symmetry_form_defect(fr)) <= 1e-7


def test_lemma1(cycles):
    for name in ("mak", "ex2", "yag"):
        assert lemma1_defect(cycles[name]) <= 1e-7
