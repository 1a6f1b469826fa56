"""Dense linear algebra for Hermitian generators and unitary propagators.

Everything here works on plain ``numpy`` arrays.  Matrix exponentials of
Hermitian generators are computed through an eigendecomposition, which gives
unitarity to machine precision and makes the Frechet derivatives exact
(divided differences of ``x -> exp(-i dt x)`` on the spectrum).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    unitary: float = 1e-10
    state_norm: float = 1e-12
    # relative eigenvalue gap below which divided differences use the limit
    degenerate: float = 1e-9
    # |dt * spread| below which second divided differences use a Taylor form
    confluent_phase: float = 1e-5
    trace_zero: float = 1e-12


TOL = Tolerances()


class ValidationError(ValueError):
    """Input matrix or state fails a structural check."""


# unnormalized Pauli matrices
I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def kron(*ops):
    out = np.array([[1.0 + 0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def max_asymmetry(h):
    """Largest entry of ``|H - H^dagger|`` relative to the largest entry of H."""
    h = np.asarray(h)
    scale = max(np.max(np.abs(h)), 1.0) if h.size else 1.0
    return float(np.max(np.abs(h - dagger(h)))) / scale


def check_square(a, name="matrix"):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite entries")
    return a


def as_hermitian(h, name="H", tol=TOL.hermitian):
    """Validate and return ``h`` as a complex Hermitian array."""
    h = check_square(np.asarray(h, dtype=complex), name)
    asym = max_asymmetry(h)
    if asym > tol:
        raise ValidationError(
            f"{name} is not Hermitian: max asymmetry {asym:.3e} exceeds {tol:.1e}"
        )
    return h


def as_unitary(u, name="U", tol=TOL.unitary):
    u = check_square(np.asarray(u, dtype=complex), name)
    err = unitarity_error(u)
    if err > tol:
        raise ValidationError(f"{name} is not unitary: max |U^dag U - I| = {err:.3e}")
    return u


def as_state(psi, name="psi", tol=TOL.state_norm):
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if not np.all(np.isfinite(psi)):
        raise ValidationError(f"{name} has non-finite entries")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > tol:
        raise ValidationError(f"{name} must have unit norm, got {nrm:.15f}")
    return psi


def unitarity_error(u):
    u = np.asarray(u)
    return float(np.max(np.abs(dagger(u) @ u - np.eye(u.shape[-1]))))


def commutator(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a @ b - b @ a


def expm_step(h, dt):
    """Return ``exp(-i dt H)`` for Hermitian ``H`` via its eigendecomposition."""
    if not np.isfinite(dt):
        raise ValidationError(f"time step must be finite, got {dt}")
    h = as_hermitian(h)
    lam, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * lam)) @ dagger(v)


def first_divided_differences(lam, dt):
    """Matrix ``Phi[j, k] = f[lam_j, lam_k]`` for ``f(x) = exp(-i dt x)``.

    Written as ``-i dt exp(-i dt (a+b)/2) sinc(dt (a-b)/2)`` which is exact at
    coincident eigenvalues and free of cancellation near them.  ``lam`` may
    carry leading batch axes.
    """
    a = lam[..., :, None]
    b = lam[..., None, :]
    half = 0.5 * dt * (a - b)
    return -1j * dt * np.exp(-0.5j * dt * (a + b)) * np.sinc(half / np.pi)


def second_divided_differences(lam, dt, tol=TOL.confluent_phase):
    """Tensor ``f[lam_j, lam_m, lam_k]`` for ``f(x) = exp(-i dt x)``."""
    a = np.broadcast_to(lam[..., :, None, None], lam.shape + (lam.shape[-1],) * 2)
    b = np.broadcast_to(lam[..., None, :, None], a.shape)
    c = np.broadcast_to(lam[..., None, None, :], a.shape)
    x = np.sort(np.stack([a, b, c], axis=-1), axis=-1)
    x0, x1, x2 = x[..., 0], x[..., 1], x[..., 2]

    def f1(p, q):
        return -1j * dt * np.exp(-0.5j * dt * (p + q)) * np.sinc(0.5 * dt * (p - q) / np.pi)

    spread = x2 - x0
    close = np.abs(dt * spread) < tol
    safe = np.where(close, 1.0, spread)
    general = (f1(x1, x2) - f1(x0, x1)) / safe
    # symmetric Taylor expansion about the mean: the linear term vanishes
    m = (x0 + x1 + x2) / 3.0
    taylor = 0.5 * (-1j * dt) ** 2 * np.exp(-1j * dt * m)
    return np.where(close, taylor, general)


def dexpm_step(h, d, dt):
    """Directional derivative ``d/de exp(-i dt (H + e D))`` at ``e = 0``."""
    h = as_hermitian(h)
    d = as_hermitian(d, "D")
    lam, v = np.linalg.eigh(h)
    phi = first_divided_differences(lam, dt)
    dt_ = dagger(v) @ d @ v
    return v @ (phi * dt_) @ dagger(v)


def d2expm_step(h, d1, d2, dt):
    """Second mixed directional derivative of ``exp(-i dt H)``."""
    h = as_hermitian(h)
    lam, v = np.linalg.eigh(h)
    e = dagger(v) @ d1 @ v
    f = dagger(v) @ d2 @ v
    dd2 = second_divided_differences(lam, dt)
    inner = np.einsum("jmk,jm,mk->jk", dd2, e, f) + np.einsum("jmk,jm,mk->jk", dd2, f, e)
    return v @ inner @ dagger(v)


def random_hermitian(n, rng, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + dagger(a))


def random_unitary(n, rng):
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_state(n, rng):
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    return psi / np.linalg.norm(psi)


def polar_unitary(u):
    """Closest unitary to ``u`` in Frobenius norm."""
    w, _, vh = np.linalg.svd(u)
    return w @ vh
