import math

import numpy as np
import pytest

from cycleindex.system import (BUILTINS, ConfigError, builtin, check_symmetry, jacobian_f,
                               load_system, make_system)


def test_rhs_shapes_and_values():
    s = builtin("mak", {"w": 0.8})
    x = np.array([[0.0, 0.5], [1.0, 0.0]])
    f = s.f_val(x)
    assert f.shape == (2, 2)
    assert np.allclose(f[:, 0], [0.0, 0.0])  # unit circle is an equilibrium set
    assert np.allclose(s.rhs(0.1)(math.pi / 1.6, x)[1], f[1] + 0.1)


def test_jacobian_constant_part_broadcasts():
    s = builtin("lin_jump", {"mu": 1.0, "nu": 0.0})
    _, jac = s.f_jac(np.zeros((2, 5)))
    assert jac.shape == (2, 2, 5)
    assert np.allclose(jac[..., 3], [[0, 1], [-1, 0]])


def test_jacobian_f_matches_compiled():
    s = builtin("ex2")
    xi = np.array([0.3, -1.1])
    assert np.allclose(jacobian_f(s, xi), s.f_jac(xi)[1], atol=1e-14)


def test_g_smoothness_flag():
    assert builtin("mak", {"w": 0.8}).g_smooth
    assert not builtin("lin_jump", {"mu": 1.0, "nu": 0.0}).g_smooth


@pytest.mark.parametrize("name,params", [("mak", {"w": 0.8}), ("ex2", {}), ("yag", {"p": 2}),
                                         ("lin_jump", {"mu": 0, "nu": 0})])
def test_symmetric_builtins(name, params):
    assert check_symmetry(builtin(name, params)).all


def test_symmetry_detects_asymmetry():
    s = make_system("skew", ["x2 + x1", "-x1"], ["0", "0"], 1.0)
    rep = check_symmetry(s)
    assert rep.verdicts == (False, True, False)


def test_duffing_amplitude_gives_requested_period():
    s = builtin("duffing_jump", {"mu": 0, "nu": 0, "delta": 0.05})
    assert s.T == pytest.approx(2 * math.pi / 1.05)
    assert s.params["a"] > 0


@pytest.mark.parametrize("raw,msg", [
    ({"system": {"builtin": "nope"}}, "unknown builtin"),
    ({"system": {"builtin": "mak"}}, "missing parameter"),
    ({"system": {"builtin": "mak", "params": {"w": 0.8, "k": 1}}}, "does not take"),
    ({"system": {"builtin": "mak", "params": {"w": 1.5}}}, "0 < w < 1"),
    ({"system": {"f": ["x2", "-x1"], "g": ["0", "sin(t)"]}}, "needs 'T'"),
    ({"system": {"f": ["x2", "-x1"], "g": ["0", "sin(t)"], "T": 1.0}}, "not T-periodic"),
    ({"system": {"f": ["x2*t", "-x1"], "g": ["0", "0"], "T": 1.0}}, "autonomous"),
    ({"system": {"f": ["x2*k", "-x1"], "g": ["0", "0"], "T": 1.0}}, "undeclared"),
    ({"system": {"f": ["x2", "-x1"], "g": ["0", "0"], "T": 1.0, "params": {"t": 1}}},
     "reserved"),
    ({"system": {"f": ["x2 +", "-x1"], "g": ["0", "0"], "T": 1.0}}, "syntax"),
    ({"system": {"f": ["x2", "-x1"], "g": ["0", "0"], "T": -1.0}}, "positive"),
])
def test_config_errors(raw, msg):
    with pytest.raises(ConfigError, match=msg):
        load_system(raw)


def test_inline_system_with_params():
    s = load_system({"system": {"f": ["x2", "-x1"], "g": ["0", "cos(k*t)"],
                                "params": {"k": 2}, "T": math.pi}})
    assert s.g_val(0.0, np.array([0.0, 0.0]))[1] == pytest.approx(1.0)
    assert s.describe()["params"] == {"k": 2.0}


def test_every_builtin_listed_builds():
    params = {"mak": {"w": 0.5}, "ex2": {}, "lin_jump": {"mu": 0, "nu": 0},
              "duffing_jump": {"mu": 0, "nu": 0, "delta": 0.1}, "yag": {"p": 2}}
    for name in BUILTINS:
        s = builtin(name, params[name])
        assert s.cycle_start is not None and s.T > 0
