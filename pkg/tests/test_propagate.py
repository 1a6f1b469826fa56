import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from landscape_lab import ControlSystem, Gate, Observable, PiecewiseControl, PureState
from landscape_lab.propagate import (
    fidelity,
    objective_gradient,
    objective_hessian,
    propagate,
    split_gradient,
    value_and_gradient,
)
from landscape_lab.qcore import ValidationError, random_hermitian, random_state, random_unitary


def _objectives(n, rng):
    rho = np.diag(rng.dirichlet(np.ones(n))).astype(complex)
    return [Gate(random_unitary(n, rng), "U"), Gate(random_unitary(n, rng), "PU"),
            PureState(random_state(n, rng), random_state(n, rng)),
            Observable(rho, random_hermitian(n, rng))]


def _fd_gradient(sys, f, obj, h=1e-6):
    x0 = f.flat()
    g = np.empty(x0.size)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        g[i] = (fidelity(sys, f.with_flat(x0 + e), obj) - fidelity(sys, f.with_flat(x0 - e), obj)) / (2 * h)
    return g


def test_endpoint_matches_scipy_product(rng):
    sys = ControlSystem(random_hermitian(3, rng), (random_hermitian(3, rng),))
    f = PiecewiseControl(1.5, rng.normal(size=(1, 6)), ell=0.8)
    u = np.eye(3)
    for a in f.amplitudes[0]:
        u = sla.expm(-1j * f.dt * (0.8 * sys.H0 + a * sys.controls[0])) @ u
    traj = propagate(sys, f)
    assert np.allclose(traj.endpoint, u, atol=1e-12)
    assert np.allclose(traj.cumulative[0], np.eye(3))


@pytest.mark.parametrize("variable_time", [False, True])
def test_gradient_and_hessian_by_differences(rng, variable_time):
    n = 3
    sys = ControlSystem(random_hermitian(n, rng), (random_hermitian(n, rng), random_hermitian(n, rng)))
    f = PiecewiseControl(2.0, rng.normal(size=(2, 5)), ell=1.3, variable_time=variable_time)
    for obj in _objectives(n, rng):
        g = objective_gradient(sys, f, obj)
        assert np.allclose(g, _fd_gradient(sys, f, obj), atol=1e-8)
        h = objective_hessian(sys, f, obj)
        x0, step = f.flat(), 1e-5
        cols = []
        for i in range(x0.size):
            e = np.zeros_like(x0)
            e[i] = step
            cols.append((objective_gradient(sys, f.with_flat(x0 + e), obj)
                         - objective_gradient(sys, f.with_flat(x0 - e), obj)) / (2 * step))
        assert np.allclose(h, np.array(cols).T, atol=1e-7)
        assert np.allclose(h, h.T, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 5), m=st.integers(1, 3), s=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_value_and_gradient_consistent(n, m, s, seed):
    rng = np.random.default_rng(seed)
    sys = ControlSystem(random_hermitian(n, rng), tuple(random_hermitian(n, rng) for _ in range(m)))
    f = PiecewiseControl(1.0, rng.normal(size=(m, s)))
    obj = Gate(random_unitary(n, rng), "SU")
    val, g = value_and_gradient(sys, f, obj)
    assert val == pytest.approx(fidelity(sys, f, obj), abs=1e-13)
    assert np.allclose(g, objective_gradient(sys, f, obj))
    assert -1 - 1e-12 <= val <= 1 + 1e-12


def test_resample_preserves_endpoint(rng):
    sys = ControlSystem(random_hermitian(3, rng), (random_hermitian(3, rng),))
    f = PiecewiseControl(1.0, rng.normal(size=(1, 7)))
    assert np.allclose(propagate(sys, f).endpoint, propagate(sys, f.resample(3)).endpoint, atol=1e-12)


def test_split_gradient_and_ordering(rng):
    sys = ControlSystem(random_hermitian(2, rng), (random_hermitian(2, rng), random_hermitian(2, rng)))
    f = PiecewiseControl(1.0, rng.normal(size=(2, 4)), variable_time=True)
    g = objective_gradient(sys, f, PureState([1, 0], [0, 1]))
    amp, gl = split_gradient(f, g)
    assert amp.shape == (2, 4) and np.ndim(gl) == 0
    assert np.allclose(amp.reshape(-1), g[:-1])


def test_control_validation():
    with pytest.raises(ValidationError):
        PiecewiseControl(-1.0, [[0.0]])
    with pytest.raises(ValidationError):
        PiecewiseControl(1.0, [[np.nan]])
    with pytest.raises(ValidationError):
        PiecewiseControl(1.0, [[0.0, 1.0]]).with_flat([1.0])
    with pytest.raises(ValidationError):
        PiecewiseControl(1.0, [[0.0]]).resample(0)
    f = PiecewiseControl.from_function(2.0, 4, np.cos)
    assert np.allclose(f.amplitudes[0], np.cos([0.25, 0.75, 1.25, 1.75]))
