import math

import numpy as np
import pytest

from landscape_lab import ControlSystem, PiecewiseControl, PureState, larc_classify, registry
from landscape_lab.propagate import value_and_gradient
from landscape_lab.qcore import ValidationError, X, Z, random_hermitian
from landscape_lab.sysmodel import REGISTRY, ising3_system, qft_gate, theorem2_construct


def _critical_check(sys, res, T, S=64):
    f = PiecewiseControl.constant(T, S, res.mu)
    return value_and_gradient(sys, f, PureState(res.psi0, res.psig))


def test_larc_verdicts():
    v = larc_classify(ising3_system())
    assert (v.algebra_dim, v.classification) == (63, "full_suN")
    e1 = registry("eigenstate3").system
    assert larc_classify(e1).classification == "full_uN"
    diag = ControlSystem(np.diag([1.0, 2.0, 4.0]), (np.diag([1.0, 0.0, -1.0]),))
    assert larc_classify(diag).classification == "insufficient"
    zero = ControlSystem(np.zeros((2, 2)), (np.zeros((2, 2)),))
    assert larc_classify(zero).algebra_dim == 0


def test_larc_exact_time_drops_drift_identity():
    sys = ControlSystem(np.eye(2) + Z, (X,))
    v = larc_classify(sys)
    assert v.classification == "full_uN" and v.exact_time == "full_suN"
    assert larc_classify(sys, exact_time=True).classification == "full_suN"


def test_theorem2_on_example1_system():
    sys = registry("eigenstate3").system
    res = theorem2_construct(sys, 0.5, 2.0)
    val, g = _critical_check(sys, res, 2.0)
    assert val == pytest.approx(0.5, abs=1e-9)
    assert np.linalg.norm(g) < 1e-8


def test_theorem2_two_level_family():
    sys = ControlSystem(Z, (X,))
    res = theorem2_construct(sys, math.cos(0.7) ** 2, 1.0)
    assert res.case == 2 and res.mu == 0.0 and res.theta == pytest.approx(0.7)
    val, g = _critical_check(sys, res, 1.0)
    assert val == pytest.approx(math.cos(0.7) ** 2, abs=1e-12) and np.linalg.norm(g) < 1e-10


def test_theorem2_identity_control():
    sys = ControlSystem(np.diag([0.0, 1.0, 3.0]), (np.eye(3),))
    res = theorem2_construct(sys, 0.3, 1.5)
    val, g = _critical_check(sys, res, 1.5)
    assert val == pytest.approx(0.3, abs=1e-9) and np.linalg.norm(g) < 1e-8


def test_theorem2_degenerate_case():
    sys = ControlSystem(np.diag([1.0, 1.0, 2.0]), (np.diag([1.0, -1.0, 0.0]),))
    res = theorem2_construct(sys, 0.4, 2.0)
    assert res.case == 1
    val, g = _critical_check(sys, res, 2.0)
    assert val == pytest.approx(0.4, abs=1e-9) and np.linalg.norm(g) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_theorem2_random_systems(seed):
    rng = np.random.default_rng(seed)
    sys = ControlSystem(random_hermitian(4, rng), (random_hermitian(4, rng),))
    res = theorem2_construct(sys, 0.6, 1.3)
    val, g = _critical_check(sys, res, 1.3)
    assert val == pytest.approx(0.6, abs=1e-9) and np.linalg.norm(g) < 1e-8


def test_theorem2_rejects_bad_input():
    sys = ControlSystem(Z, (X,))
    for F in (0.0, 1.0, 1.5):
        with pytest.raises(ValidationError):
            theorem2_construct(sys, F, 1.0)
    with pytest.raises(ValidationError):
        theorem2_construct(sys, 0.5, -1.0)
    with pytest.raises(ValidationError):
        theorem2_construct(ControlSystem(Z, (X, Z)), 0.5, 1.0)


@pytest.mark.parametrize("pid", ["eigenstate3", "saddle4", "trap4", "unitary_trap3", "vartime4"])
def test_registry_examples_are_critical(pid):
    p = registry(pid)
    val, gnorm = p.check()
    assert val == pytest.approx(p.expected_fidelity, abs=1e-10)
    assert gnorm < 1e-8


@pytest.mark.parametrize("T", [math.pi / 2, 1.0, math.pi, 2 * math.pi, 4.0])
def test_eigenstate3_closed_form(T):
    p = registry("eigenstate3", T=T)
    f = p.critical_control
    val, g = value_and_gradient(p.system, f, p.objective)
    assert val == pytest.approx(8 / 9 * math.sin(T / 2) ** 4, abs=1e-10)
    # the functional derivative at f = -1 is flat in t and vanishes only for T in pi Z
    density = -8 / 9 * math.sin(T) * math.sin(T / 2) ** 2
    assert np.allclose(g / f.dt, density, atol=1e-12)


def test_registry_parameter_checks():
    with pytest.raises(ValidationError, match="unknown example"):
        registry("nope")
    with pytest.raises(ValidationError):
        registry("trap4", b=0.1)
    assert set(REGISTRY) >= {"eigenstate3", "saddle4", "trap4", "unitary_trap3", "vartime4", "qft3"}


def test_qft_target_and_system():
    v = qft_gate()
    assert np.allclose(v.conj().T @ v, np.eye(8))
    assert abs(np.linalg.det(v) - 1) < 1e-12
    p = registry("qft3")
    assert p.system.M == 6 and p.system.dim == 8 and p.target_time == 8.0
    assert p.critical_control is None


def test_system_validation():
    with pytest.raises(ValidationError, match="Hermitian"):
        ControlSystem(np.array([[0, 1], [0, 0]]), (X,))
    with pytest.raises(ValidationError):
        ControlSystem(Z, ())
    with pytest.raises(ValidationError):
        ControlSystem(Z, (np.eye(3),))
    s = ControlSystem(Z, (X,)).shifted(0.5)
    assert np.allclose(s.H0, Z + 0.5 * X)
