"""Bilinear control systems, controllability tests and the example registry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grouplandscape import Gate, PureState
from .propagate import PiecewiseControl, propagate, value_and_gradient
from .qcore import (
    TOL,
    I2,
    X,
    Y,
    Z,
    ValidationError,
    as_hermitian,
    commutator,
    dagger,
    kron,
)


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """``H(t) = H0 + sum_m f_m(t) H_m`` on an ``N``-dimensional Hilbert space."""

    H0: np.ndarray
    controls: tuple

    def __post_init__(self):
        h0 = as_hermitian(self.H0, "H0")
        ctrls = tuple(as_hermitian(h, f"H{m + 1}") for m, h in enumerate(self.controls))
        if not ctrls:
            raise ValidationError("a control system needs at least one control Hamiltonian")
        for m, h in enumerate(ctrls):
            if h.shape != h0.shape:
                raise ValidationError(f"H{m + 1} has shape {h.shape}, H0 has {h0.shape}")
        object.__setattr__(self, "H0", h0)
        object.__setattr__(self, "controls", ctrls)
        object.__setattr__(self, "control_stack", np.array(ctrls))

    @property
    def dim(self):
        return self.H0.shape[0]

    @property
    def M(self):
        return len(self.controls)

    @property
    def traceless_controls(self):
        return all(abs(np.trace(h)) < TOL.trace_zero * max(1.0, np.max(np.abs(h)))
                   for h in self.controls)

    def shifted(self, mu):
        """Equivalent system with the constant offset ``mu`` folded into the drift."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        h0 = self.H0 + np.einsum("m,mij->ij", mu, self.control_stack)
        return ControlSystem(h0, self.controls)

    def conjugated(self, w):
        return ControlSystem(w @ self.H0 @ dagger(w),
                             tuple(w @ h @ dagger(w) for h in self.controls))


# -- Lie algebra rank condition ----------------------------------------------


@dataclass(frozen=True)
class ControllabilityVerdict:
    algebra_dim: int
    classification: str
    exact_time: str
    exact_time_dim: int
    diagnostic: str = ""


class _RealSpan:
    """Incremental Gram-Schmidt basis of anti-Hermitian matrices.

    Inner product ``Re Tr(A^dag B)``; a candidate is admitted when its residual
    exceeds ``rel_tol`` times the largest admitted norm.
    """

    def __init__(self, n, rel_tol=1e-9):
        self.n = n
        self.rel_tol = rel_tol
        self.vecs = []
        self.mats = []
        self.max_norm = 0.0

    def add(self, m):
        v = np.concatenate([m.real.ravel(), m.imag.ravel()])
        nrm0 = np.linalg.norm(v)
        if nrm0 == 0:
            return False
        r = v.copy()
        for _ in range(2):
            for b in self.vecs:
                r -= (b @ r) * b
        res = np.linalg.norm(r)
        if res <= self.rel_tol * max(self.max_norm, nrm0):
            return False
        self.vecs.append(r / res)
        self.mats.append(m)
        self.max_norm = max(self.max_norm, nrm0)
        return True

    def __len__(self):
        return len(self.vecs)


def _close(generators, n, budget):
    span = _RealSpan(n)
    queue = [g for g in generators if span.add(g)]
    elems = list(queue)
    steps = 0
    while queue:
        a = queue.pop(0)
        for b in list(elems):
            steps += 1
            if steps > budget:
                return span, elems, False
            c = commutator(a, b)
            if span.add(c):
                elems.append(c)
                queue.append(c)
    return span, elems, True


def _verdict_label(span_dim, derived_dim, n):
    if span_dim == n * n:
        return "full_uN"
    if derived_dim >= n * n - 1:
        return "full_suN"
    return "insufficient"


def larc_classify(sys, exact_time=False):
    """Lie algebra rank test for ``{iH0, iH1, ...}``.

    The closure is computed to a fixpoint.  The exact-time set replaces
    ``iH0`` by all commutators, i.e. ``span{iH_m} + [L, L]``.  With
    ``exact_time=True`` the headline ``classification`` reports that set.
    """
    n = sys.dim
    budget = n**4
    gens = [1j * sys.H0] + [1j * h for h in sys.controls]
    span, elems, ok = _close(gens, n, budget)
    diag = "" if ok else f"closure budget of {budget} commutators exhausted"
    derived = _RealSpan(n)
    for i, a in enumerate(elems):
        for b in elems[i + 1:]:
            derived.add(commutator(a, b))
            if len(derived) >= n * n - 1:
                break
        if len(derived) >= n * n - 1:
            break
    full_label = _verdict_label(len(span), len(derived), n) if ok else "insufficient"
    et = _RealSpan(n)
    for m in [1j * h for h in sys.controls] + derived.mats:
        et.add(m)
    et_label = _verdict_label(len(et), len(derived), n) if ok else "insufficient"
    if exact_time:
        return ControllabilityVerdict(len(et), et_label, et_label, len(et), diag)
    return ControllabilityVerdict(len(span), full_label, et_label, len(et), diag)


# -- constructive critical points for any system -----------------------------


@dataclass(frozen=True, eq=False)
class Theorem2Result:
    psi0: np.ndarray
    psig: np.ndarray
    mu: float
    theta: float
    case: int
    scan: list = field(default_factory=list, repr=False)

    def __iter__(self):
        return iter((self.psi0, self.psig, self.mu))


def _degenerate_shift(sys, grid, gap_tol=1e-8):
    for mu in grid:
        ev = np.linalg.eigvalsh(sys.H0 + mu * sys.controls[0])
        gaps = np.diff(ev)
        j = int(np.argmin(gaps))
        if gaps[j] < gap_tol * max(1.0, np.max(np.abs(ev))):
            return mu, j
    return None


def _expectation_gap(sys, mu):
    h1 = sys.controls[0]
    ev, v = np.linalg.eigh(sys.H0 + mu * h1)
    vmax, vmin = v[:, -1], v[:, 0]
    return float(np.real(vmax.conj() @ h1 @ vmax - vmin.conj() @ h1 @ vmin)), ev, v


def theorem2_construct(sys, F, T, scan=None):
    """States for which a constant control is critical with fidelity ``F``.

    Returns a :class:`Theorem2Result` (iterable as ``psi0, psig, mu``).  The
    constant control ``f = mu`` on ``[0, T]`` is a critical point of the
    transfer probability from ``psi0`` to ``psig`` with value ``F``.
    """
    if sys.M != 1:
        raise ValidationError("the construction needs a single control Hamiltonian")
    if sys.dim < 2:
        raise ValidationError("need N >= 2")
    if not 0 < F < 1:
        raise ValidationError(f"F must lie in (0, 1), got {F}")
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    h1 = sys.controls[0]
    if scan is None:
        pos = np.logspace(-3, 3, 241)
        scan = np.concatenate([[0.0], pos, -pos])
    hit = _degenerate_shift(sys, scan)
    theta = math.acos(math.sqrt(F))
    if hit is not None:
        mu, j = hit
        hmu = sys.H0 + mu * h1
        ev, v = np.linalg.eigh(hmu)
        sub = v[:, j:j + 2]
        # diagonalize H1 inside the degenerate pair
        _, w = np.linalg.eigh(dagger(sub) @ h1 @ sub)
        basis = sub @ w
        # target [cos t, sin t e^{i g}], start [1, 0]: fidelity cos^2 t
        psi0 = basis[:, 0].astype(complex)
        psig = math.cos(theta) * basis[:, 0] + math.sin(theta) * basis[:, 1]
        # the constant drift only contributes a global phase on the pair
        psig = np.exp(-1j * T * ev[j]) * psig
        return Theorem2Result(psi0, psig.astype(complex), float(mu), theta, 1, [mu])

    trace = []
    g0, _, _ = _expectation_gap(sys, 0.0)
    lmax, lmin = np.linalg.eigvalsh(h1)[[-1, 0]]
    if abs(lmax - lmin) < 1e-12 * max(1.0, abs(lmax)) or abs(g0) < 1e-14:
        mu = 0.0
    else:
        lo, hi = -1.0, 1.0
        for _ in range(200):
            glo, _, _ = _expectation_gap(sys, lo)
            ghi, _, _ = _expectation_gap(sys, hi)
            trace.append((lo, glo, hi, ghi))
            if glo < 0 < ghi:
                break
            lo, hi = 2 * lo, 2 * hi
        else:
            raise ArithmeticError(f"no sign change of the expectation gap; scan {trace[-5:]}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm, _, _ = _expectation_gap(sys, mid)
            if gm > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-15 * max(1.0, abs(mid)):
                break
        mu = 0.5 * (lo + hi)
    _, ev, v = _expectation_gap(sys, mu)
    a, b = ev[-1], ev[0]
    vmax, vmin = v[:, -1], v[:, 0]
    # avoid psig = psi0 up to phase: theta = (b - a) T / 2 mod pi
    if abs(math.remainder(theta - (b - a) * T / 2, math.pi)) < 1e-6:
        theta = -theta
    phi = 0.0
    psi0 = (np.exp(1j * theta) * vmax + np.exp(-1j * (theta + phi)) * vmin) / math.sqrt(2)
    psig = (np.exp(-1j * T * a) * vmax
            + np.exp(-1j * phi) * np.exp(-1j * T * b) * vmin) / math.sqrt(2)
    return Theorem2Result(psi0, psig, float(mu), theta, 2, trace)


# -- registry of closed-form examples ----------------------------------------


@dataclass(frozen=True, eq=False)
class ExampleProblem:
    id: str
    system: ControlSystem
    objective: object
    critical_control: PiecewiseControl | None
    expected_fidelity: float | None
    expected_class: str | None
    target_time: float
    params: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def check(self):
        """Fidelity and gradient norm at the stored critical control."""
        if self.critical_control is None:
            raise ValidationError(f"{self.id} has no stored critical control")
        val, g = value_and_gradient(self.system, self.critical_control, self.objective)
        return val, float(np.linalg.norm(g))


def _tridiag_ones(n):
    return np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)


def eigenstate3(T=math.pi, S=64):
    h0 = np.diag([1.0, 2.0, 4.0])
    h1 = np.array([[1, math.sqrt(2 / 3), 0],
                   [math.sqrt(2 / 3), 2, math.sqrt(1 / 3)],
                   [0, math.sqrt(1 / 3), 4]])
    sys = ControlSystem(h0, (h1,))
    obj = PureState([1, 0, 0], [0, 0, 1])
    f = PiecewiseControl.constant(T, S, -1.0)
    return ExampleProblem("eigenstate3", sys, obj, f, 8 / 9 * math.sin(T / 2) ** 4,
                          "any-value-family", T, {"T": T, "S": S})


def saddle4(theta=math.pi / 6, phi=math.pi / 3, T=2 * math.pi, S=200):
    if not (math.cos(theta) * math.cos(phi) > 0 and math.sin(theta) * math.sin(phi) > 0):
        raise ValidationError(
            "saddle4 needs cos(theta)cos(phi) > 0 and sin(theta)sin(phi) > 0 "
            f"(theta={theta}, phi={phi})")
    h0 = np.diag([2.0, 4.0, 5.0, 9.0])
    sys = ControlSystem(h0, (_tridiag_ones(4),))
    psi0 = [math.cos(phi), 0, 0, math.sin(phi)]
    # target is the free evolution of [cos theta, 0, 0, sin theta]
    psig = np.exp(-1j * T * np.diag(h0)) * np.array([math.cos(theta), 0, 0, math.sin(theta)])
    obj = PureState(psi0, psig)
    f = PiecewiseControl.constant(T, S, 0.0)
    return ExampleProblem("saddle4", sys, obj, f, math.cos(theta - phi) ** 2, "saddle", T,
                          {"theta": theta, "phi": phi, "T": T, "S": S})


def trap4(theta=math.pi / 3, b=3.0, eps=0.2, S=200):
    lhs = b**2 * math.cos(theta) ** 2
    mid = 2 / math.pi * math.sin(2 * theta)
    if not lhs > mid > 0:
        raise ValidationError(
            f"trap4 needs b^2 cos^2(theta) > (2/pi) sin(2 theta) > 0, got {lhs:.6g} > {mid:.6g} > 0")
    if not eps > 0:
        raise ValidationError("eps must be positive")
    T = math.pi / eps
    h0 = np.diag([1 + eps, 1.0, 2.0, 2.0])
    h1 = np.array([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, b], [0, 0, b, 0]], dtype=float)
    sys = ControlSystem(h0, (h1,))
    psi0 = np.array([np.exp(1j * theta), 0, 0, np.exp(-1j * theta)]) / math.sqrt(2)
    psig = np.array([np.exp(-1j * T * (1 + eps)), 0, 0, np.exp(-2j * T)]) / math.sqrt(2)
    obj = PureState(psi0, psig)
    f = PiecewiseControl.constant(T, S, 0.0)
    return ExampleProblem("trap4", sys, obj, f, math.cos(theta) ** 2, "trap", T,
                          {"theta": theta, "b": b, "eps": eps, "S": S})


UNITARY_TRAP3_PARAMS = {
    "-": dict(a=5 * math.sqrt(2 / 3), b=4.0, c=1.0, phi=2 * math.pi / 3, gamma=-3 * math.pi / 4),
    "+": dict(a=math.sqrt(2 / 3), b=-1.0, c=0.0, phi=math.pi / 3, gamma=-math.pi / 4),
}


def egconsts(case, a, b, c, phi, gamma):
    """Constants of the three-level unitary-trap Hessian.

    ``w`` uses the constant-mode coefficient ``-2/pi`` of the sine-kernel
    operator (checked by quadrature); ``w_pinned`` keeps ``4/pi``.
    """
    sgn = 1.0 if case == "+" else -1.0
    x = math.cos(gamma) - math.sin(phi)
    q = a**2 * math.cos(phi) - (b**2 + sgn * c**2) * math.sin(gamma)
    return {
        "gradient": a * math.sin(phi) + (b + c) * math.cos(gamma),
        "w": 2 / math.pi * x + q,
        "w_pinned": 4 / math.pi * x + q,
        "x": x,
        "y": math.sin(gamma) + sgn * math.sin(gamma),
        "z": math.cos(phi) - math.sin(gamma),
        "q": q,
    }


def unitary_trap3(case="-", eps=0.2, S=200, **override):
    if case not in UNITARY_TRAP3_PARAMS:
        raise ValidationError(f"case must be '+' or '-', got {case!r}")
    p = dict(UNITARY_TRAP3_PARAMS[case], **override)
    k = egconsts(case, **p)
    checks = [
        (abs(k["gradient"]) < 1e-9, "0 = a sin(phi) + (b + c) cos(gamma)"),
        (k["w"] > 0, "0 < w"),
        (k["x"] < 0, "0 > x = cos(gamma) - sin(phi)"),
        (k["y"] <= 1e-12, "0 >= y = sin(gamma) +/- sin(gamma)"),
        (k["z"] >= -1e-12, "0 <= z = cos(phi) - sin(gamma)"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ValidationError(f"unitary_trap3 constraint violated: {msg} ({k})")
    T = math.pi / eps
    h0 = np.diag([1 + eps, 1.0, 2.0])
    h1 = np.array([[p["a"], 1, 0], [1, p["b"], 1], [0, 1, p["c"]]], dtype=float)
    sys = ControlSystem(h0, (h1,))
    sgn = 1.0 if case == "+" else -1.0
    wdiag = np.array([np.exp(1j * p["phi"]), 1j * np.exp(1j * p["gamma"]),
                      1j * np.exp(sgn * 1j * p["gamma"])])
    vdag = np.diag(wdiag) @ np.diag(np.exp(1j * T * np.diag(h0)))
    obj = Gate(dagger(vdag), "U")
    f = PiecewiseControl.constant(T, S, 0.0)
    expected = float(np.real(wdiag.sum()) / 3)
    return ExampleProblem("unitary_trap3", sys, obj, f, expected, "trap", T,
                          dict(p, case=case, eps=eps, S=S), {"egconsts": k})


def vartime4(eps=0.2, gamma=0.0, S=200):
    s3 = math.sqrt(3)
    b = 2.5 * (1 - s3)
    c = s3 - 3
    d = 3.0
    g = math.sqrt(3 / 71 * (19 + 12 * s3))
    r = 2 / 9 * (3 - s3)
    s = math.sqrt(1 - r**2)
    phi, theta = math.pi / 3, -math.pi / 3
    T = math.pi / eps
    h0 = np.diag([1 + eps, 1.0, 2.0, 3.0])
    h1 = np.array([[0, 1, 0, 0], [1, b, 1, 0], [0, 1, c, g], [0, 0, g, d]])
    sys = ControlSystem(h0, (h1,))
    m = np.array([[r, 0, 0, s * np.exp(1j * (theta - gamma))],
                  [0, -1j, 0, 0],
                  [0, 0, np.exp(1j * phi), 0],
                  [-s * np.exp(1j * gamma), 0, 0, r * np.exp(1j * theta)]])
    vdag = m @ np.diag(np.exp(1j * T * np.diag(h0)))
    obj = Gate(dagger(vdag), "U")
    f = PiecewiseControl.constant(T, S, 0.0, variable_time=True)
    expected = float(np.real(np.trace(m)) / 4)
    return ExampleProblem(
        "vartime4", sys, obj, f, expected, "trap", T,
        dict(eps=eps, gamma=gamma, S=S, b=b, c=c, d=d, g=g, r=r, phi=phi, theta=theta),
        {"pinned_fidelity": (33 - 2 * s3) / 48})


QFT_PHASE_M = 5


def qft_gate(n_qubits=3, m=QFT_PHASE_M):
    dim = 2**n_qubits
    omega = np.exp(-2j * math.pi / dim)
    j = np.arange(dim)
    pref = np.exp(2j * math.pi * (m + 0.25) / dim)
    return pref / math.sqrt(dim) * omega ** np.outer(j, j)


def ising3_system():
    zz = kron(Z, Z, I2) + kron(I2, Z, Z)
    ctrls = (kron(X, I2, I2), kron(Y, I2, I2), kron(I2, X, I2),
             kron(I2, Y, I2), kron(I2, I2, X), kron(I2, I2, Y))
    return ControlSystem(0.5 * zz, tuple(0.5 * h for h in ctrls))


def qft3(T=8.0, S=140):
    sys = ising3_system()
    obj = Gate(qft_gate(), "SU")
    return ExampleProblem("qft3", sys, obj, None, None, None, T, {"T": T, "S": S})


REGISTRY = {
    "eigenstate3": eigenstate3,
    "saddle4": saddle4,
    "trap4": trap4,
    "unitary_trap3": unitary_trap3,
    "vartime4": vartime4,
    "qft3": qft3,
}


def registry(id, **params):
    """Build a registered example problem by id."""
    try:
        build = REGISTRY[id]
    except KeyError:
        raise ValidationError(f"unknown example id {id!r}; known: {sorted(REGISTRY)}") from None
    return build(**params)


def random_control(problem, rng, S=None, scale=1.0):
    S = S or problem.params.get("S", 64)
    a = scale * rng.standard_normal((problem.system.M, S))
    return PiecewiseControl(problem.target_time, a)


def endpoint_fidelity(problem, f):
    return problem.objective.value(propagate(problem.system, f).endpoint)
