"""Critical points of control landscapes: verification, higher-order probes and
non-constant critical controls from the constraint-adjoined Schrodinger equation.

Hessian spectra are reported for the sampled functional second derivative
``d^2 F / df(s) df(t)``, i.e. the amplitude Hessian divided by ``dt^2`` (the
drift-scale row and column are left in their own units).  This is a
congruence of the amplitude Hessian, so inertia and definiteness verdicts are
unchanged, but the eigenvalues no longer shrink with the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grouplandscape import KinematicReport, PureState, kinematic_classify
from .propagate import (
    PiecewiseControl,
    objective_hessian,
    propagate,
    value_and_gradient,
)
from .qcore import ValidationError, commutator, polar_unitary


@dataclass(frozen=True)
class HessianSpectrum:
    min: float
    max: float
    count_negative: int
    count_positive: int
    count_null: int
    band: float
    eigenvalues: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class CriticalPointReport:
    gradient_norm: float
    hessian_spectrum: HessianSpectrum
    classification: str
    fidelity: float
    kinematic_report: KinematicReport | None


def density_hessian(f, h):
    """Rescale an amplitude Hessian to the sampled functional second derivative."""
    d = np.full(f.n_params, 1.0 / f.dt)
    if f.variable_time:
        d[-1] = 1.0
    return d[:, None] * h * d[None, :]


def hessian_spectrum(h, rel_band=1e-7):
    ev = np.linalg.eigvalsh(h)
    band = rel_band * float(np.max(np.abs(ev)))
    return HessianSpectrum(float(ev[0]), float(ev[-1]), int(np.sum(ev < -band)),
                           int(np.sum(ev > band)), int(np.sum(np.abs(ev) <= band)), band, ev)


def classify_spectrum(spec):
    if spec.count_positive and spec.count_negative:
        return "saddle"
    if spec.count_positive == 0 and spec.count_null == 0:
        return "trap_candidate"
    if spec.count_positive == 0:
        return "second_order_inconclusive"
    # nonnegative spectrum: a minimum of the fidelity, not a maximum
    return "minimum_candidate"


def verify_critical(sys, obj, f, grad_tol=1e-8, rel_band=1e-7, kinematic=True):
    """Gradient, Hessian spectrum and classification of the control ``f``.

    ``trap_candidate`` means a negative definite discretized Hessian: a strict
    local maximum over the piecewise-constant controls of this grid, which is
    a statement about a finite dimensional subspace only.
    """
    val, g = value_and_gradient(sys, f, obj)
    gnorm = float(np.linalg.norm(g))
    spec = hessian_spectrum(density_hessian(f, objective_hessian(sys, f, obj)), rel_band)
    label = "not_critical" if gnorm > grad_tol else classify_spectrum(spec)
    krep = None
    if kinematic:
        krep = kinematic_classify(obj, propagate(sys, f).endpoint)
    return CriticalPointReport(gnorm, spec, label, val, krep)


def third_order_probe(sys, obj, f, direction, h=0.02):
    """Third directional derivative of the fidelity along ``direction``.

    Five-point central stencil ``(F(2h) - 2F(h) + 2F(-h) - F(-2h)) / (2h^3)``
    extrapolated over ``h`` and ``h/2``.
    """
    if not 1e-3 <= h <= 1e-1:
        raise ValidationError(f"stencil step must lie in [1e-3, 1e-1], got {h}")
    d = np.asarray(direction, dtype=float)
    if d.shape != f.amplitudes.shape:
        d = d.reshape(f.amplitudes.shape)
    a0 = f.amplitudes

    def fid(eps):
        u = propagate(sys, PiecewiseControl(f.T, a0 + eps * d, f.ell, f.variable_time)).endpoint
        return obj.value(u)

    def stencil(step):
        return (fid(2 * step) - 2 * fid(step) + 2 * fid(-step) - fid(-2 * step)) / (2 * step**3)

    d1, d2 = stencil(h), stencil(h / 2)
    return float((4 * d2 - d1) / 3)


def indicator_direction(f, t0, t1):
    """Unit-amplitude indicator of ``[t0, t1)`` sampled on the slices of ``f``."""
    t = f.slice_midpoints()
    return np.broadcast_to(((t >= t0) & (t < t1)).astype(float), f.amplitudes.shape).copy()


# -- non-constant critical controls --------------------------------------------


@dataclass(frozen=True, eq=False)
class DaeSolution:
    seed: np.ndarray
    psi0: np.ndarray
    times: np.ndarray
    control: np.ndarray
    horizon: float
    valid_horizon: float
    psig: np.ndarray
    fidelity: float
    seed_fidelity: float
    max_residual: float
    min_denominator: float
    nonconstant: bool
    reason: str
    unitary: np.ndarray = field(repr=False, default=None)

    @property
    def psib(self):
        return self.seed / np.linalg.norm(self.seed)

    def as_piecewise(self, S):
        """Midpoint samples of the computed control on ``S`` slices of the valid horizon."""
        t = (np.arange(S) + 0.5) * self.valid_horizon / S
        return PiecewiseControl(self.valid_horizon, np.interp(t, self.times, self.control)[None, :])

    def objective(self):
        return PureState(self.psi0, self.psig)

    def rows(self):
        return list(zip(self.times.tolist(), self.control.tolist()))


def _dae_operators(sys):
    h0, h1 = sys.H0, sys.controls[0]
    c1 = commutator(h0, h1)
    return h0, h1, c1, commutator(h0, c1), commutator(h1, c1)


def dae_constraints(sys, psi0, psi_b):
    """Residuals of the seed conditions for the co-state ``psi_b``.

    Returns ``(Im<B|H1|0>, Re<B|[H0,H1]|0>, Im<B|0>)``.  The third one makes
    ``<B|0>`` real so the co-state has the form ``<b|0> |b>``.
    """
    _, h1, c1, _, _ = _dae_operators(sys)
    bc = np.conj(psi_b)
    return (float(np.imag(bc @ h1 @ psi0)), float(np.real(bc @ c1 @ psi0)),
            float(np.imag(bc @ psi0)))


def _real_rows(sys, psi0):
    # each constraint is Re(<B|v>) or Im(<B|v>) = Re(<B| -i v>) for a vector v
    _, h1, c1, _, _ = _dae_operators(sys)
    vecs = [-1j * (h1 @ psi0), c1 @ psi0, -1j * psi0]
    # Re(conj(B) . v) = B.re . v.re + B.im . v.im
    return np.array([np.concatenate([v.real, v.imag]) for v in vecs])


def dae_seed(sys, psi0, rng, draws=100, den_tol=1e-6):
    """Admissible co-states for the constraint-adjoined Schrodinger equation.

    Random Gaussian vectors are projected onto the real null space of the
    seed constraints, scaled so that ``<B|0> = ||B||^2`` and filtered for a
    nonvanishing control denominator at ``t = 0``.

    Returns
    -------
    seeds : list of ndarray
    rejected : list of str
        One diagnostic per rejected draw.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    n = psi0.size
    if n < 2:
        raise ValidationError("need N >= 2")
    if sys.M != 1:
        raise ValidationError("the construction needs a single control Hamiltonian")
    a = _real_rows(sys, psi0)
    _, sv, vt = np.linalg.svd(a)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0])))
    null = vt[rank:]
    if null.shape[0] == 0:
        raise ArithmeticError("seed constraints leave no admissible co-state")
    _, _, _, k0, k1 = _dae_operators(sys)
    scale = float(np.linalg.norm(k1, 2))
    seeds, rejected = [], []
    for _ in range(draws):
        x = null.T @ (null @ rng.standard_normal(2 * n))
        b = x[:n] + 1j * x[n:]
        r = float(np.real(np.vdot(b, psi0)))
        nb = float(np.vdot(b, b).real)
        if abs(r) < 1e-8 * math.sqrt(nb):
            rejected.append(f"<B|psi0> = {r:.2e} vanishes")
            continue
        b = b * (r / nb)
        den = float(np.imag(np.conj(b) @ k1 @ psi0))
        if abs(den) < den_tol * scale * np.linalg.norm(b):
            rejected.append(f"denominator {den:.2e} vanishes at t = 0")
            continue
        seeds.append(b)
    return seeds, rejected


def dae_solve(sys, psi0, seed, horizon, step=None, den_tol=1e-6, res_tol=1e-6):
    """Integrate the Schrodinger equation with the critical-point control law.

    The control is ``f = -Im<B|U^dag K0 U|0> / Im<B|U^dag K1 U|0>`` with
    ``K0 = [H0, [H0, H1]]`` and ``K1 = [H1, [H0, H1]]``.  Classical RK4 in
    ``U`` with a polar re-projection onto the unitary group after every step.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    seed = np.asarray(seed, dtype=complex)
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    step = horizon / 1000 if step is None else step
    if step > horizon / 100:
        raise ValidationError(f"step {step} exceeds horizon/100")
    h0, h1, _, k0, k1 = _dae_operators(sys)
    bc = np.conj(seed)
    den_scale = float(np.linalg.norm(k1, 2) * np.linalg.norm(seed))

    def control(u):
        ket, bra = u @ psi0, bc @ u.conj().T
        num = float(np.imag(bra @ k0 @ ket))
        den = float(np.imag(bra @ k1 @ ket))
        return -num / den, den

    def rhs(u):
        fv, _ = control(u)
        return -1j * (h0 + fv * h1) @ u

    def residual(u):
        return abs(float(np.imag(bc @ u.conj().T @ h1 @ u @ psi0)))

    n_steps = int(math.ceil(horizon / step - 1e-9))
    step = horizon / n_steps
    u = np.eye(psi0.size, dtype=complex)
    f0, den0 = control(u)
    times, ctrl = [0.0], [f0]
    min_den, max_res = abs(den0), residual(u)
    reason = "completed"
    for k in range(n_steps):
        k1_ = rhs(u)
        k2_ = rhs(u + 0.5 * step * k1_)
        k3_ = rhs(u + 0.5 * step * k2_)
        k4_ = rhs(u + step * k3_)
        u_new = polar_unitary(u + step / 6 * (k1_ + 2 * k2_ + 2 * k3_ + k4_))
        fv, den = control(u_new)
        res = residual(u_new)
        if abs(den) < den_tol * den_scale:
            reason = "singular_denominator"
            break
        if res > res_tol:
            reason = "residual_growth"
            break
        u = u_new
        times.append((k + 1) * step)
        ctrl.append(fv)
        min_den, max_res = min(min_den, abs(den)), max(max_res, res)
    times = np.array(times)
    ctrl = np.array(ctrl)
    psib = seed / np.linalg.norm(seed)
    psig = u @ psib
    slope = (ctrl[1] - ctrl[0]) / (times[1] - times[0]) if times.size > 1 else 0.0
    return DaeSolution(
        seed=seed, psi0=psi0, times=times, control=ctrl, horizon=float(horizon),
        valid_horizon=float(times[-1]), psig=psig,
        fidelity=float(abs(np.vdot(psig, u @ psi0)) ** 2),
        seed_fidelity=float(abs(np.vdot(psib, psi0)) ** 2),
        max_residual=float(max_res), min_denominator=float(min_den),
        nonconstant=bool(abs(slope) > 1e-6), reason=reason, unitary=u)
