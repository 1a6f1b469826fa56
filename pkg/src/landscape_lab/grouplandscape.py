"""Fidelities on the unitary group and their kinematic critical points.

Three objective families are supported:

* :class:`PureState` -- transfer probability ``|<psi_g|U|psi_0>|^2``;
* :class:`Observable` -- expectation ``Tr[A U rho0 U^dag]``;
* :class:`Gate` -- overlap with a target gate, either ``Re Tr[V^dag U]/N``
  (``group="U"`` or ``"SU"``) or the phase-blind ``|Tr[V^dag U]|^2/N^2``
  (``group="PU"``).

:func:`kinematic_classify` decides whether a group element is a critical
point of the group fidelity and, if so, what kind.  The classification rules
are closed-form spectral tests, so they can be applied directly to optimizer
endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qcore import ValidationError, as_hermitian, as_state, as_unitary, dagger

GROUPS = ("U", "SU", "PU")


@dataclass(frozen=True, eq=False)
class PureState:
    psi0: np.ndarray
    psig: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "psi0", as_state(self.psi0, "psi0"))
        object.__setattr__(self, "psig", as_state(self.psig, "psig"))
        if self.psi0.shape != self.psig.shape:
            raise ValidationError("initial and target states differ in dimension")

    @property
    def dim(self):
        return self.psi0.size

    def value(self, u):
        return float(abs(np.conj(self.psig) @ u @ self.psi0) ** 2)

    def as_observable(self):
        return Observable(np.outer(self.psi0, self.psi0.conj()),
                          np.outer(self.psig, self.psig.conj()))


@dataclass(frozen=True, eq=False)
class Observable:
    rho0: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        rho = as_hermitian(self.rho0, "rho0", tol=1e-10)
        a = as_hermitian(self.A, "A", tol=1e-10)
        if rho.shape != a.shape:
            raise ValidationError("rho0 and A differ in dimension")
        if abs(np.trace(rho).real - 1.0) > 1e-10:
            raise ValidationError(f"rho0 must have unit trace, got {np.trace(rho).real}")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValidationError("rho0 must be positive semi-definite")
        object.__setattr__(self, "rho0", rho)
        object.__setattr__(self, "A", a)

    @property
    def dim(self):
        return self.A.shape[0]

    def value(self, u):
        return float(np.real(np.trace(self.A @ u @ self.rho0 @ dagger(u))))


@dataclass(frozen=True, eq=False)
class Gate:
    V: np.ndarray
    group: str = "U"

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValidationError(f"group must be one of {GROUPS}, got {self.group!r}")
        object.__setattr__(self, "V", as_unitary(self.V, "V"))

    @property
    def dim(self):
        return self.V.shape[0]

    def value(self, u):
        z = np.trace(dagger(self.V) @ u)
        n = self.dim
        if self.group == "PU":
            return float(abs(z) ** 2 / n**2)
        return float(np.real(z) / n)


@dataclass(frozen=True)
class KinematicReport:
    is_critical: bool
    critical_value: float
    manifold_index: int | None
    classification: str
    residual: float


def _scaled_tol(tol, n, m):
    return tol * n * max(1.0, float(np.max(np.abs(m))))


def kinematic_classify(obj, u, tol=1e-8):
    """Classify ``u`` as a critical point of the group fidelity of ``obj``.

    Labels are ``global_max``, ``global_min``, ``saddle``,
    ``attractive_suboptimal`` (local maximum below 1, only possible over
    SU(N)), ``repulsive_suboptimal`` (its local-minimum mirror image) and
    ``non_critical``.
    """
    if tol <= 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    u = np.asarray(u, dtype=complex)
    if isinstance(obj, PureState):
        return _classify_observable(obj.as_observable(), u, tol)
    if isinstance(obj, Observable):
        return _classify_observable(obj, u, tol)
    if isinstance(obj, Gate):
        w = dagger(obj.V) @ u
        if obj.group == "U":
            return _classify_u(w, tol)
        if obj.group == "SU":
            return _classify_su(w, tol)
        return _classify_pu(w, tol)
    raise TypeError(f"unsupported objective {type(obj).__name__}")


def _classify_observable(obj, u, tol):
    rho_t = u @ obj.rho0 @ dagger(u)
    res = float(np.max(np.abs(obj.A @ rho_t - rho_t @ obj.A)))
    val = obj.value(u)
    n = obj.dim
    if res >= _scaled_tol(tol, n, obj.A):
        return KinematicReport(False, val, None, "non_critical", res)
    # extreme values pair sorted spectra of A and rho0
    a = np.sort(np.linalg.eigvalsh(obj.A))
    p = np.sort(np.linalg.eigvalsh(obj.rho0))
    hi, lo = float(a @ p), float(a @ p[::-1])
    band = max(1e-6, 100 * tol)
    if abs(val - hi) < band:
        label = "global_max"
    elif abs(val - lo) < band:
        label = "global_min"
    else:
        label = "saddle"
    return KinematicReport(True, val, None, label, res)


def _classify_u(w, tol):
    n = w.shape[0]
    res = float(np.max(np.abs(w - dagger(w))))
    val = float(np.real(np.trace(w)) / n)
    if res >= _scaled_tol(tol, n, w):
        return KinematicReport(False, val, None, "non_critical", res)
    ev = np.linalg.eigvalsh(0.5 * (w + dagger(w)))
    d = int(np.sum(ev < 0))
    if d == 0:
        label = "global_max"
    elif d == n:
        label = "global_min"
    else:
        label = "saddle"
    return KinematicReport(True, 1.0 - 2.0 * d / n, d, label, res)


def _classify_su(w, tol):
    n = w.shape[0]
    val = float(np.real(np.trace(w)) / n)
    alpha = float(np.imag(np.trace(w)) / n)
    anti = 0.5 * (w - dagger(w))
    res = float(np.max(np.abs(anti - 1j * alpha * np.eye(n))))
    if res >= _scaled_tol(tol, n, w):
        return KinematicReport(False, val, None, "non_critical", res)
    r_ev = np.linalg.eigvalsh(0.5 * (w + dagger(w)))
    mag = math.sqrt(max(0.0, 1.0 - alpha**2))
    flat = mag < math.sqrt(tol)
    neg = int(np.sum(r_ev < 0))
    d = 0 if flat else min(neg, n - neg)
    # spectrum {i e^{i theta} (x d), i e^{-i theta} (x N-d)}; read theta off
    # the majority eigenvalue
    if flat:
        mu = 1j * (1.0 if alpha >= 0 else -1.0)
    else:
        mu = (-mag if neg > n - neg else mag) + 1j * alpha
    theta = -float(np.angle(-1j * mu))
    k = n - 2 * d
    ang_tol = math.asin(min(1.0, 10 * n * tol))
    if k == 0:
        quantized = n % 4 == 0
    else:
        # unit determinant: theta * (N - 2d) = pi N / 2 modulo 2 pi
        miss = (theta * k - math.pi * n / 2) % (2 * math.pi)
        quantized = min(miss, 2 * math.pi - miss) < ang_tol * abs(k)
    if not quantized:
        return KinematicReport(False, val, d, "non_critical", res)
    if d > 0 or flat:
        label = "saddle"
    else:
        # W is a multiple of the identity
        wphase = complex(np.trace(w) / n)
        if wphase.real > 0:
            label = "global_max" if abs(wphase - 1) < 1e-6 else "attractive_suboptimal"
        else:
            label = "global_min" if abs(wphase + 1) < 1e-6 else "repulsive_suboptimal"
    return KinematicReport(True, val, d, label, res)


def _classify_pu(w, tol):
    n = w.shape[0]
    gamma = complex(np.trace(w))
    val = abs(gamma) ** 2 / n**2
    if abs(gamma) < n * tol:
        return KinematicReport(True, val, None, "global_min", abs(gamma))
    m = np.conj(gamma) * w / abs(gamma)
    anti = 0.5 * (m - dagger(m))
    alpha = float(np.imag(np.trace(m)) / n)
    res = float(np.max(np.abs(anti - 1j * alpha * np.eye(n))))
    if res >= _scaled_tol(tol, n, w):
        return KinematicReport(False, val, None, "non_critical", res)
    spread = float(np.max(np.abs(w - gamma / n * np.eye(n))))
    label = "global_max" if spread < math.sqrt(tol) else "saddle"
    return KinematicReport(True, val, None, label, res)


def sun_trap_ceiling(n):
    """Fidelities ``cos(2 pi k / N)``, ``k = 1 .. ceil(N/4) - 1``, of SU(N) traps."""
    if n < 2:
        raise ValidationError("N must be at least 2")
    return [math.cos(2 * math.pi * k / n) for k in range(1, math.ceil(n / 4))]


def group_second_derivative(obj, u, a):
    """Second derivative of the gate fidelity along ``x -> U exp(x A)`` at 0."""
    if not isinstance(obj, Gate):
        raise TypeError("group second derivative is defined for Gate objectives")
    a = np.asarray(a, dtype=complex)
    if np.max(np.abs(a + dagger(a))) > 1e-10 * max(1.0, np.max(np.abs(a))):
        raise ValidationError("direction must be anti-Hermitian")
    n = obj.dim
    if obj.group in ("SU", "PU") and abs(np.trace(a)) > 1e-10 * n:
        raise ValidationError(f"direction must be traceless for group {obj.group}")
    w = dagger(obj.V) @ np.asarray(u)
    if obj.group == "PU":
        gamma = np.trace(w)
        return float(2 * np.real(np.conj(gamma) * np.trace(w @ a @ a))
                     + 2 * abs(np.trace(w @ a)) ** 2) / n**2
    return float(np.real(np.trace(w @ a @ a)) / n)


def anti_hermitian_basis(n, traceless=False):
    """Orthonormal basis of u(N) (or spanning set of su(N) if ``traceless``)."""
    basis = []
    for j in range(n):
        e = np.zeros((n, n), dtype=complex)
        e[j, j] = 1j
        basis.append(e)
        for k in range(j + 1, n):
            s = np.zeros((n, n), dtype=complex)
            s[j, k], s[k, j] = 1j / math.sqrt(2), 1j / math.sqrt(2)
            t = np.zeros((n, n), dtype=complex)
            t[j, k], t[k, j] = 1 / math.sqrt(2), -1 / math.sqrt(2)
            basis += [s, t]
    if traceless:
        basis = [b - np.trace(b) / n * np.eye(n) for b in basis]
    return basis


def group_gradient(obj, u):
    """Directional derivatives of the group fidelity along a basis of the algebra."""
    u = np.asarray(u, dtype=complex)
    traceless = isinstance(obj, Gate) and obj.group in ("SU", "PU")
    out = []
    for a in anti_hermitian_basis(u.shape[0], traceless):
        if isinstance(obj, Gate):
            w = dagger(obj.V) @ u
            if obj.group == "PU":
                g = 2 * np.real(np.conj(np.trace(w)) * np.trace(w @ a)) / obj.dim**2
            else:
                g = np.real(np.trace(w @ a)) / obj.dim
        else:
            o = obj.as_observable() if isinstance(obj, PureState) else obj
            g = np.real(np.trace(o.A @ u @ (a @ o.rho0 - o.rho0 @ a) @ dagger(u)))
        out.append(float(g))
    return np.array(out)
