"""Piecewise-constant propagation and exact control derivatives.

Controls are step functions on a uniform grid of ``S`` slices over ``[0, T]``.
Slice ``s`` evolves under ``ell*H0 + sum_r a[r, s] H_r`` for ``dt = T/S``.

Derivatives are written in the interaction picture of the cumulative
propagators ``C_s = U_s ... U_1``: the derivative of the endpoint with respect
to a parameter ``k`` living in slice ``s`` is ``C_S Q_k`` with
``Q_k = C_s^dag dU_s C_{s-1}``, and second derivatives are time-ordered
products ``C_S Q_i Q_j`` (or the exact second Frechet derivative when both
parameters share a slice).  Every fidelity is then a linear or modulus-squared
function of traces against these matrices, so gradient and Hessian assembly
reduce to a handful of batched products.

Parameter ordering used throughout: amplitudes flattened channel-major
(``index = r*S + s``), followed by the drift scale ``ell`` when the control is
in variable-time mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grouplandscape import Gate, Observable, PureState
from .qcore import (
    ValidationError,
    dagger,
    first_divided_differences,
    second_divided_differences,
)


@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """Channel-by-slice amplitudes on ``[0, T]``, optionally with a drift scale.

    Parameters
    ----------
    T : float
        Horizon.
    amplitudes : array_like, shape (M, S)
        ``amplitudes[r, s]`` is the value of channel ``r`` on slice ``s``.
    ell : float
        Multiplier of the drift Hamiltonian (1 means fixed time).
    variable_time : bool
        When true ``ell`` is an optimization variable and derivatives carry an
        extra trailing component.
    """

    T: float
    amplitudes: np.ndarray
    ell: float = 1.0
    variable_time: bool = False

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=float)
        if a.ndim == 1:
            a = a[None, :]
        if a.ndim != 2 or a.shape[1] < 1:
            raise ValidationError(f"amplitudes must have shape (M, S), got {a.shape}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValidationError(f"horizon T must be positive, got {self.T}")
        if not np.all(np.isfinite(a)) or not np.isfinite(self.ell):
            raise ValidationError("control values must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "ell", float(self.ell))

    @property
    def M(self):
        return self.amplitudes.shape[0]

    @property
    def S(self):
        return self.amplitudes.shape[1]

    @property
    def dt(self):
        return self.T / self.S

    @property
    def n_params(self):
        return self.M * self.S + (1 if self.variable_time else 0)

    @classmethod
    def constant(cls, T, S, values, **kw):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(T, np.repeat(values[:, None], S, axis=1), **kw)

    @classmethod
    def from_function(cls, T, S, fn, M=1, **kw):
        """Sample ``fn(t) -> (M,)`` at slice midpoints."""
        t = (np.arange(S) + 0.5) * T / S
        vals = np.array([np.atleast_1d(fn(ti)) for ti in t], dtype=float).T
        return cls(T, vals.reshape(M, S), **kw)

    def flat(self):
        x = self.amplitudes.reshape(-1)
        if self.variable_time:
            x = np.append(x, self.ell)
        return x.copy()

    def with_flat(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.n_params:
            raise ValidationError(f"expected {self.n_params} parameters, got {x.size}")
        n = self.M * self.S
        ell = float(x[n]) if self.variable_time else self.ell
        return replace(self, amplitudes=x[:n].reshape(self.M, self.S), ell=ell)

    def resample(self, factor):
        """Same step function on ``S * factor`` slices."""
        factor = int(factor)
        if factor < 1:
            raise ValidationError("resampling factor must be a positive integer")
        return replace(self, amplitudes=np.repeat(self.amplitudes, factor, axis=1))

    def slice_midpoints(self):
        return (np.arange(self.S) + 0.5) * self.dt


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Slice propagators and their running products (``cumulative[0] = I``)."""

    slice_unitaries: np.ndarray
    cumulative: np.ndarray
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    dt: float = 0.0

    @property
    def endpoint(self):
        return self.cumulative[-1]


def _check_dims(sys, f):
    if f.M != sys.M:
        raise ValidationError(f"control has {f.M} channels, system has {sys.M}")


def slice_hamiltonians(sys, f):
    n = sys.dim
    ctrl = (f.amplitudes.T @ sys.control_stack.reshape(f.M, n * n)).reshape(f.S, n, n)
    return f.ell * sys.H0[None] + ctrl


def propagate(sys, f):
    """Evolve the system under the piecewise-constant control ``f``."""
    _check_dims(sys, f)
    hs = slice_hamiltonians(sys, f)
    lam, vec = np.linalg.eigh(hs)
    us = (vec * np.exp(-1j * f.dt * lam)[:, None, :]) @ dagger(vec)
    cum = np.empty((f.S + 1, sys.dim, sys.dim), dtype=complex)
    cum[0] = np.eye(sys.dim)
    for s in range(f.S):
        cum[s + 1] = us[s] @ cum[s]
    return Trajectory(us, cum, lam, vec, f.dt)


def endpoint(sys, f):
    return propagate(sys, f).endpoint


# -- objectives as functions of the endpoint ---------------------------------


def _trace_form(obj, u):
    """Return ``(B, kind, scale)`` with ``z = Tr[B]`` at the endpoint.

    ``kind`` is ``"re"`` (F = scale * Re z) or ``"abs2"`` (F = scale * |z|^2).
    Perturbations enter as ``z(Q) = Tr[B Q]``.
    """
    n = u.shape[0]
    if isinstance(obj, Gate):
        b = dagger(obj.V) @ u
        if obj.group == "PU":
            return b, "abs2", 1.0 / n**2
        return b, "re", 1.0 / n
    if isinstance(obj, PureState):
        b = np.outer(obj.psi0, np.conj(obj.psig) @ u)
        return b, "abs2", 1.0
    raise TypeError(f"no trace form for {type(obj).__name__}")


def objective_value(obj, traj):
    """Fidelity of the objective at the trajectory endpoint."""
    u = traj.endpoint if isinstance(traj, Trajectory) else np.asarray(traj)
    return obj.value(u)


def _generators(sys, f):
    gens = list(sys.control_stack)
    if f.variable_time:
        gens.append(sys.H0)
    return np.array(gens)


def _interaction_derivatives(traj, gens):
    """``Q[g, s] = C_s^dag dU_s[g] C_{s-1}`` and slice-basis generators."""
    lam, vec, dt = traj.eigenvalues, traj.eigenvectors, traj.dt
    phi = first_divided_differences(lam, dt)  # (S, N, N)
    e = dagger(vec)[None] @ gens[:, None] @ vec[None]  # V^dag G V, (g, s, N, N)
    d = vec[None] @ (phi[None] * e) @ dagger(vec)[None]
    c = traj.cumulative
    q = dagger(c[1:])[None] @ d @ c[:-1][None]
    return q, e


def _same_slice_second(traj, e):
    """``Q2[g, h, s] = C_s^dag d2U_s[g, h] C_{s-1}``."""
    lam, vec, dt = traj.eigenvalues, traj.eigenvectors, traj.dt
    dd2 = second_divided_differences(lam, dt)  # (S, N, N, N)
    inner = np.einsum("sjmk,gsjm,hsmk->ghsjk", dd2, e, e)
    inner = inner + np.swapaxes(inner, 0, 1)
    d2 = vec @ inner @ dagger(vec)
    c = traj.cumulative
    return dagger(c[1:]) @ d2 @ c[:-1]


def _param_map(f, n_gens):
    """Map extended per-slice parameters onto the public parameter vector."""
    S = f.S
    k_ext = n_gens * S
    p = np.zeros((k_ext, f.n_params))
    m = f.M * S
    p[np.arange(m), np.arange(m)] = 1.0
    if f.variable_time:
        p[m:, m] = 1.0
    return p


def _first_order_traces(traj, gens, b):
    """``z[g, s] = Tr[B Q[g, s]]`` without forming the ``Q`` matrices.

    ``Tr[B C_s^dag dU C_{s-1}] = Tr[X_s dU]`` with ``X_s = C_{s-1} B C_s^dag``;
    in the slice eigenbasis this is ``sum_jk Y_kj Phi_jk (V^dag G V)_jk``,
    which collapses to ``sum_ab G_ab W_ab`` with ``W = conj(V) (Phi * Y^T) V^T``.
    """
    lam, vec, dt = traj.eigenvalues, traj.eigenvectors, traj.dt
    c = traj.cumulative
    x = c[:-1] @ b[None] @ dagger(c[1:])
    y = dagger(vec) @ x @ vec
    z = first_divided_differences(lam, dt) * np.swapaxes(y, -1, -2)
    w = np.conj(vec) @ z @ np.swapaxes(vec, -1, -2)
    n = b.shape[0]
    return gens.reshape(len(gens), n * n) @ w.reshape(-1, n * n).T


def _contract_gradient(f, g_ext):
    m = f.M * f.S
    if not f.variable_time:
        return g_ext[:m].copy()
    return np.append(g_ext[:m], g_ext[m:].sum())


def value_and_gradient(sys, f, obj):
    """Objective value and exact gradient in one propagation."""
    _check_dims(sys, f)
    traj = propagate(sys, f)
    gens = _generators(sys, f)
    u = traj.endpoint
    if isinstance(obj, Observable):
        at = dagger(u) @ obj.A @ u
        b = obj.rho0 @ at
        g_ext = 2.0 * np.real(_first_order_traces(traj, gens, b).reshape(-1))
        val = float(np.real(np.trace(b)))
    else:
        b, kind, scale = _trace_form(obj, u)
        z = np.trace(b)
        zk = _first_order_traces(traj, gens, b).reshape(-1)
        if kind == "re":
            g_ext = scale * np.real(zk)
            val = scale * float(np.real(z))
        else:
            g_ext = 2.0 * scale * np.real(np.conj(z) * zk)
            val = scale * float(abs(z) ** 2)
    return val, _contract_gradient(f, g_ext)


def objective_gradient(sys, f, obj):
    """Exact gradient of ``objective_value(obj, propagate(sys, f))``.

    Returns a flat array ordered channel-major over slices, with the drift
    scale derivative appended in variable-time mode.
    """
    return value_and_gradient(sys, f, obj)[1]


def split_gradient(f, g):
    """View a flat gradient as ``(channels[M, S], g_ell or None)``."""
    n = f.M * f.S
    return g[:n].reshape(f.M, f.S), (float(g[n]) if f.variable_time else None)


def objective_hessian(sys, f, obj):
    """Exact Hessian of the objective with respect to the control parameters."""
    _check_dims(sys, f)
    traj = propagate(sys, f)
    gens = _generators(sys, f)
    G, S, n = len(gens), f.S, sys.dim
    q, e = _interaction_derivatives(traj, gens)
    q2 = _same_slice_second(traj, e)
    qf = q.reshape(G * S, n, n)
    slice_of = np.tile(np.arange(S), G)
    later = slice_of[:, None] > slice_of[None, :]
    same = slice_of[:, None] == slice_of[None, :]
    u = traj.endpoint

    def ordered_trace(b):
        # T[i, j] = Tr[B P_ij], P_ij the time-ordered second derivative
        bq = b[None] @ qf
        prod = np.einsum("iab,jba->ij", bq, qf)
        t = np.where(later, prod, prod.T)
        same_vals = np.einsum("ab,ghsba->ghs", b, q2)
        gi = np.repeat(np.arange(G), S)
        si = slice_of
        t_same = same_vals[gi[:, None], gi[None, :], si[:, None]]
        return np.where(same, t_same, t)

    if isinstance(obj, Observable):
        at = dagger(u) @ obj.A @ u
        b = obj.rho0 @ at
        second = ordered_trace(b)
        cross = np.einsum("iab,jab->ij", at[None] @ qf @ obj.rho0[None], qf.conj())
        h_ext = 2.0 * np.real(second) + 2.0 * np.real(cross)
    else:
        b, kind, scale = _trace_form(obj, u)
        second = ordered_trace(b)
        if kind == "re":
            h_ext = scale * np.real(second)
        else:
            z = np.trace(b)
            zk = np.einsum("ab,kba->k", b, qf)
            h_ext = 2.0 * scale * np.real(np.conj(z) * second + np.outer(np.conj(zk), zk))
    p = _param_map(f, G)
    h = p.T @ h_ext @ p
    return 0.5 * (h + h.T)


def fidelity(sys, f, obj):
    return objective_value(obj, propagate(sys, f))
