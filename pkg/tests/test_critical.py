import math

import numpy as np
import pytest

from landscape_lab import registry
from landscape_lab.critical import (
    HessianSpectrum,
    classify_spectrum,
    dae_constraints,
    dae_seed,
    dae_solve,
    hessian_spectrum,
    indicator_direction,
    third_order_probe,
    verify_critical,
)
from landscape_lab.expcli import random_four_level
from landscape_lab.propagate import value_and_gradient
from landscape_lab.qcore import ValidationError, random_state


def _spec(neg, pos, null):
    return HessianSpectrum(-1.0, 1.0, neg, pos, null, 1e-7)


def test_classify_spectrum():
    assert classify_spectrum(_spec(3, 1, 0)) == "saddle"
    assert classify_spectrum(_spec(4, 0, 0)) == "trap_candidate"
    assert classify_spectrum(_spec(2, 0, 2)) == "second_order_inconclusive"
    assert classify_spectrum(_spec(0, 3, 1)) == "minimum_candidate"
    s = hessian_spectrum(np.diag([-2.0, -1.0, 1e-12]))
    assert (s.count_negative, s.count_null, s.count_positive) == (2, 1, 0)


@pytest.mark.parametrize("pid, params, label", [
    ("trap4", {}, "trap_candidate"),
    ("unitary_trap3", {}, "trap_candidate"),
    ("unitary_trap3", {"case": "+"}, "trap_candidate"),
    ("vartime4", {}, "trap_candidate"),
    ("saddle4", {}, "second_order_inconclusive"),
])
def test_verify_examples(pid, params, label):
    p = registry(pid, **params)
    rep = verify_critical(p.system, p.objective, p.critical_control)
    assert rep.classification == label
    assert rep.fidelity == pytest.approx(p.expected_fidelity, abs=1e-10)
    assert not rep.kinematic_report.is_critical


def test_non_critical_label(rng):
    p = registry("trap4", S=40)
    f = p.critical_control.with_flat(p.critical_control.flat() + 0.1 * rng.normal(size=40))
    assert verify_critical(p.system, p.objective, f).classification == "not_critical"


def test_third_order_probe_saddle4():
    theta, phi = math.pi / 6, math.pi / 3
    p = registry("saddle4", theta=theta, phi=phi)
    f = p.critical_control
    val = third_order_probe(p.system, p.objective, f, indicator_direction(f, 0.0, math.pi))
    assert val == pytest.approx(-32 / 35 * math.sin(2 * (theta - phi)), rel=1e-3)
    with pytest.raises(ValidationError):
        third_order_probe(p.system, p.objective, f, np.ones(f.S), h=1.0)


def test_third_order_probe_is_finite_on_trap():
    p = registry("trap4", S=40)
    f = p.critical_control
    d = indicator_direction(f, 0.0, f.T / 2)
    assert np.isfinite(third_order_probe(p.system, p.objective, f, d))


@pytest.fixture(scope="module")
def dae_case():
    rng = np.random.default_rng(7)
    sys = random_four_level(rng)
    psi0 = random_state(4, rng)
    seeds, rejected = dae_seed(sys, psi0, rng)
    return sys, psi0, seeds, rejected


def test_dae_seed_constraints(dae_case):
    sys, psi0, seeds, _ = dae_case
    assert seeds
    for b in seeds[:10]:
        assert np.abs(dae_constraints(sys, psi0, b)).max() < 1e-12
        assert np.vdot(b, psi0) == pytest.approx(np.vdot(b, b).real, rel=1e-12)


def test_dae_solution_is_critical(dae_case):
    sys, psi0, seeds, _ = dae_case
    sol = dae_solve(sys, psi0, seeds[0], 1.0, 1e-3)
    assert sol.reason == "completed" and sol.nonconstant
    assert sol.max_residual < 1e-8
    assert sol.fidelity == pytest.approx(sol.seed_fidelity, abs=1e-8)
    f = sol.as_piecewise(400)
    val, g = value_and_gradient(sys, f, sol.objective())
    assert np.linalg.norm(g) < 1e-4
    assert val == pytest.approx(sol.fidelity, abs=1e-4)


def test_dae_validation(dae_case):
    sys, psi0, seeds, _ = dae_case
    with pytest.raises(ValidationError):
        dae_solve(sys, psi0, seeds[0], -1.0)
    with pytest.raises(ValidationError):
        dae_solve(sys, psi0, seeds[0], 1.0, step=0.1)
