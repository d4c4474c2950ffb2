import json
import math

import numpy as np
import pytest

from cycleindex.cycle import cycle_from_initial
from cycleindex.linearized import monodromy
from cycleindex.poincare import (FixedPointRecord, PoincareError, andr_index_check,
                                 classify_fixed_point, classify_matrix, dp_jacobian,
                                 epsilon_sweep, fallback_seeds, find_fixed_points,
                                 orbit_distance, periodicity_defect, poincare_map,
                                 theorem_seeds, write_fixed_points)
from cycleindex.system import builtin, make_system

PI = math.pi


def _setup(name, **p):
    s = builtin(name, p)
    return s, cycle_from_initial(s, s.cycle_start, s.cycle_period or s.T)


@pytest.fixture(scope="module")
def mak():
    return _setup("mak", w=0.8)


def test_classify_examples():
    c = classify_matrix(np.diag([2.0, 0.5]))
    assert c["type"] == "saddle" and c["index"] == -1
    rot = 0.9 * np.array([[math.cos(1.0), -math.sin(1.0)], [math.sin(1.0), math.cos(1.0)]])
    c = classify_matrix(rot)
    assert (c["type"], c["stability"], c["index"]) == ("focus", "stable", 1)
    c = classify_matrix(np.diag([1.5, 3.0]))
    assert (c["type"], c["stability"]) == ("node", "unstable")
    c = classify_matrix(np.diag([1.0 + 1e-8, 0.5]))
    assert c["stability"] == "non-hyperbolic"


def test_classify_refuses_large_residual():
    rec = FixedPointRecord(1e-3, np.zeros(2), 1e-6, np.eye(2) * 0.5, "fd")
    with pytest.raises(PoincareError):
        classify_fixed_point(rec)


def test_unperturbed_map_fixes_cycle(mak):
    s, c = mak
    xi = c.x(1.3)
    assert np.abs(poincare_map(s, 0.0, xi) - xi).max() <= 1e-8


def test_unperturbed_map_off_cycle_rotates(mak):
    s, _ = mak
    r = math.sqrt(0.5)
    out = poincare_map(s, 0.0, [0.0, r])
    angle = PI / 2 - 0.5 * s.T  # phi' = -(1 - r^2)
    assert np.hypot(*out) == pytest.approx(r, abs=1e-9)
    assert np.allclose(out, [r * math.cos(angle), r * math.sin(angle)], atol=1e-8)


def test_forced_oscillator_closed_form():
    s = builtin("lin_jump", {"mu": 0, "nu": 0})
    eps = 0.01
    # x1 = (1 + eps t/2) sin t solves x'' + x = eps cos t with x(0) = 0, x'(0) = 1
    assert np.allclose(poincare_map(s, eps, [0.0, 1.0]), [0.0, 1.0 + eps * PI], atol=1e-8)


def test_map_batch_and_validation(mak):
    s, c = mak
    pts = c.x(np.array([0.0, 1.0, 2.0]))
    assert poincare_map(s, 1e-3, pts).shape == (3, 2)
    with pytest.raises(ValueError):
        poincare_map(s, -1.0, pts)
    with pytest.raises(ValueError):
        poincare_map(s, 0.0, [1.0, 2.0, 3.0])


def test_jacobian_at_eps0_is_monodromy(mak):
    s, c = mak
    A, meth = dp_jacobian(s, 0.0, c.x(0.0))
    assert meth == "variational"
    assert np.abs(A - monodromy(c).Y).max() <= 1e-5


def test_jacobian_methods_agree(mak):
    s, c = mak
    xi = c.x(0.7) * 1.01
    A_var, _ = dp_jacobian(s, 1e-3, xi, "variational")
    A_fd, _ = dp_jacobian(s, 1e-3, xi, "fd")
    assert np.abs(A_var - A_fd).max() <= 1e-5
    assert np.linalg.det(A_var) > 0


def test_linear_system_jacobian_constant():
    s = make_system("lin", ["x2", "-x1 - 0.3*x2"], ["0", "cos(t)"], 2 * PI)
    A0, _ = dp_jacobian(s, 0.1, [0.0, 0.0])
    A1, _ = dp_jacobian(s, 0.1, [2.0, -3.0])
    A2, meth = dp_jacobian(s, 0.1, [2.0, -3.0], "fd")
    assert np.abs(A0 - A1).max() <= 1e-7 and np.abs(A0 - A2).max() <= 1e-7
    with pytest.raises(ValueError):
        dp_jacobian(s, 0.1, [0.0, 0.0], "magic")


def test_jump_forcing_uses_fd():
    s = builtin("lin_jump", {"mu": 1, "nu": 0})
    assert dp_jacobian(s, 1e-3, [0.5, 0.5])[1] == "fd"


def test_mak_fixed_points(mak):
    s, c = mak
    eps = 1e-3
    fps = find_fixed_points(s, eps, theorem_seeds(c, [0.0, PI / 0.8], eps=eps), c)
    assert len(fps) >= 2
    near = fps.nearest(2)
    assert sorted(r.side for r in near) == ["inside", "outside"]
    for r in near:
        assert r.residual <= 1e-9
        assert (r.type == "saddle") == (r.det_I_minus_A < 0)
        assert periodicity_defect(s, eps, r.xi) <= 1e-7
        assert orbit_distance(s, eps, r.xi, c) > 1e-6 * c.diameter
    saddle = next(r for r in near if r.type == "saddle")
    assert saddle.side == "inside" and saddle.index == -1


def test_ex2_fixed_points():
    s, c = _setup("ex2")
    eps = 1e-3
    fps = find_fixed_points(s, eps, theorem_seeds(c, [0.0, 5 * PI / 4], eps=eps), c,
                            fallback=fallback_seeds(c))
    assert {"inside", "outside"} <= set(fps.sides())


def test_no_convergence_gives_empty_set(mak):
    s, c = mak
    off = np.array([[0.0, 0.8]])
    fps = find_fixed_points(s, 1e-3, off, c, max_iter=1)
    assert len(fps) == 0 and fps.n_failed == 1
    assert "no seed converged" in fps.notes


def test_fixed_points_need_positive_eps(mak):
    s, c = mak
    with pytest.raises(ValueError):
        find_fixed_points(s, 0.0, c.x(0.0), c)


def test_andr(mak):
    s, c = mak
    chk = andr_index_check(s, 1e-3, c, 0)
    assert chk.equal and chk.winding.index == 0
    with pytest.raises(PoincareError):
        andr_index_check(s, 0.0, c, 0)


def test_single_eps_sweep(mak):
    s, c = mak
    sw = epsilon_sweep(s, c, [1e-3], [0.0, PI / 0.8])
    assert len(sw.rows) == 1 and sw.distance_decreasing is None
    assert sw.phase_error <= 0.1


def test_write_fixed_points(tmp_path, mak):
    s, c = mak
    fps = find_fixed_points(s, 1e-3, theorem_seeds(c, [0.0], eps=1e-3), c)
    write_fixed_points(fps.records, tmp_path / "fp.csv", tmp_path / "fp.json")
    data = json.loads((tmp_path / "fp.json").read_text())
    assert len(data) == len(fps)
    assert {"x1", "x2", "residual", "type", "side", "phase"} <= set(data[0])
    header = (tmp_path / "fp.csv").read_text().splitlines()[0]
    assert header.startswith("eps,")
