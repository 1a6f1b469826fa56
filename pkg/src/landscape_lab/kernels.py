"""Two-time trigonometric kernel operators on ``L^2(0, T)``.

A :class:`KernelOperator` is a finite sum of symmetric kernels

* ``const``: ``k(s, t) = 1``, i.e. the unnormalized projector ``Pi[1]``;
* ``cos``: ``k(s, t) = cos(w (s - t))``, equal to ``Pi[sin w.] + Pi[cos w.]``;
* ``sin``: ``k(s, t) = -sin(w |s - t|)``, the symmetrized sine kernel.

``Pi[b]`` sends ``a`` to ``<b, a> b`` (no normalization), so its only nonzero
eigenvalue is ``||b||^2``.  At ``w = pi / T`` the sine kernel is diagonal in
the real Fourier basis of period ``T``::

    S = S0 Pi[1] + sum_k 4 / (pi (4k^2 - 1)) (Pi[sin 2kw.] + Pi[cos 2kw.])

with ``S0 = -2/pi`` (``S 1 = -(2T/pi) 1`` by direct integration).

Hessians of fidelities at constant controls are operators of this kind.  In
the amplitude basis of a piecewise-constant control on ``S`` slices the
Hessian is the matrix of cell integrals ``int int_{cell_i x cell_j} k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .qcore import ValidationError
from .sysmodel import egconsts, registry

S_CONST = -2.0 / math.pi
S_CONST_PINNED = -4.0 / math.pi
KINDS = ("const", "cos", "sin")


def s_coefficient(k):
    """Coefficient of ``Pi[sin 2kw.] + Pi[cos 2kw.]`` in the sine-kernel series."""
    if k == 0:
        return S_CONST
    return 4.0 / (math.pi * (4 * k * k - 1))


def s_tail_bound(K):
    """Upper bound ``1/(pi K)`` on ``sum_{k > K} 4/(pi(4k^2 - 1))``."""
    return 1.0 / (math.pi * K)


@dataclass(frozen=True)
class KernelTerm:
    kind: str
    omega: float
    coeff: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")

    def __call__(self, s, t):
        if self.kind == "const":
            return self.coeff * np.ones(np.broadcast(s, t).shape)
        if self.kind == "cos":
            return self.coeff * np.cos(self.omega * (s - t))
        return -self.coeff * np.sin(self.omega * np.abs(s - t))


@dataclass(frozen=True)
class DefinitenessReport:
    n: int
    min_eig: float
    max_eig: float
    verdict: str
    margin: float


@dataclass(frozen=True, eq=False)
class KernelOperator:
    """Sum of trigonometric translation kernels on ``[0, T]``.

    ``ell_block`` holds the second derivative in the drift-scale direction
    for variable-time problems (the mixed drift/control block is zero for the
    examples built here) and ``ell_bound`` the constant ``C`` of the bound
    ``ell_block = -C T^2 / N``.
    """

    T: float
    terms: tuple
    label: str = ""
    ell_block: float | None = None
    ell_bound: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"horizon must be positive, got {self.T}")
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def base_omega(self):
        return math.pi / self.T

    def kernel(self, s, t):
        s, t = np.asarray(s, float), np.asarray(t, float)
        out = np.zeros(np.broadcast(s, t).shape)
        for term in self.terms:
            out = out + term(s, t)
        return out

    def scaled(self, c):
        return KernelOperator(self.T, [KernelTerm(t.kind, t.omega, c * t.coeff) for t in self.terms],
                              self.label, None if self.ell_block is None else c * self.ell_block,
                              self.ell_bound, dict(self.info))

    def __add__(self, other):
        if not math.isclose(self.T, other.T, rel_tol=1e-14):
            raise ValidationError("operators live on different horizons")
        return KernelOperator(self.T, self.terms + other.terms, self.label or other.label)

    def _is_base_sine(self, w):
        return math.isclose(w, self.base_omega, rel_tol=1e-12)

    def rank_terms(self):
        """Explicit rank-one projectors ``[(kind, omega, coeff)]`` (no sine tails)."""
        out = []
        for t in self.terms:
            if t.kind == "const":
                out.append(("1", 0.0, t.coeff))
            elif t.kind == "cos":
                out += [("sin", t.omega, t.coeff), ("cos", t.omega, t.coeff)]
            elif self._is_base_sine(t.omega):
                out.append(("1", 0.0, t.coeff * S_CONST))
        return out

    def projector_series(self, K=64):
        """Merged projector coefficients including sine tails up to ``k = K``.

        Returns a dict keyed by ``(fn, freq)`` with ``fn`` in ``{"1", "sin",
        "cos"}``.  Raises if a sine kernel has a frequency other than ``pi/T``
        (no eigen-series is known then).
        """
        acc = {}

        def add(key, c):
            key = (key[0], round(key[1], 12))
            acc[key] = acc.get(key, 0.0) + c

        for fn, w, c in self.rank_terms():
            add((fn, w), c)
        for t in self.terms:
            if t.kind != "sin":
                continue
            if not self._is_base_sine(t.omega):
                raise ValidationError(f"no projector series for a sine kernel at omega={t.omega}")
            for k in range(1, K + 1):
                ak = t.coeff * s_coefficient(k)
                add(("sin", 2 * k * t.omega), ak)
                add(("cos", 2 * k * t.omega), ak)
        return acc

    def sine_weight(self):
        return sum(t.coeff for t in self.terms if t.kind == "sin")


def build_C(omega, T):
    """``C = Pi[sin w.] + Pi[cos w.]``, kernel ``cos(w (s - t))``."""
    if omega == 0:
        return KernelOperator(T, [KernelTerm("const", 0.0, 1.0)], "C")
    return KernelOperator(T, [KernelTerm("cos", float(omega), 1.0)], "C")


def build_S(T, omega=None):
    """Symmetrized sine kernel ``-sin(w |s - t|)``; ``w`` defaults to ``pi/T``."""
    w = math.pi / T if omega is None else float(omega)
    return KernelOperator(T, [KernelTerm("sin", w, 1.0)], "S")


# -- quadrature ---------------------------------------------------------------


def _cell_edges(T, n):
    return np.linspace(0.0, T, n + 1)


def _cell_integrals(fn, w, edges):
    lo, hi = edges[:-1], edges[1:]
    if fn == "cos":
        return (np.sin(w * hi) - np.sin(w * lo)) / w
    return (np.cos(w * lo) - np.cos(w * hi)) / w


def _cell_matrix(term, edges):
    h = np.diff(edges)
    if term.kind == "const" or term.omega == 0:
        if term.kind == "sin":
            return np.zeros((h.size, h.size))
        return term.coeff * np.outer(h, h)
    w = term.omega
    ic, is_ = _cell_integrals("cos", w, edges), _cell_integrals("sin", w, edges)
    if term.kind == "cos":
        return term.coeff * (np.outer(ic, ic) + np.outer(is_, is_))
    # s in cell i later than t in cell j: -sin(w(s - t)) separates
    lower = -(np.outer(is_, ic) - np.outer(ic, is_))
    m = np.tril(lower, -1)
    m = m + m.T
    diag = -2.0 * (h / w - np.sin(w * h) / w**2)
    m[np.diag_indices_from(m)] = diag
    return term.coeff * m


def discretize(op, n, rule="midpoint", basis="operator", include_ell=False):
    """Matrix realization of ``op`` on ``n`` uniform cells.

    Parameters
    ----------
    rule : {"midpoint", "cell"}
        ``midpoint`` samples the kernel at cell centres; ``cell`` integrates it
        exactly over each pair of cells (Galerkin with cell indicators).
    basis : {"operator", "amplitude"}
        ``operator`` scaling has eigenvalues converging to those of the
        integral operator.  ``amplitude`` scaling (one extra factor ``dt``) is
        the Hessian with respect to piecewise-constant amplitudes.
    include_ell : bool
        Append the drift-scale row and column (amplitude basis only).
    """
    if n < 8:
        raise ValidationError(f"grid size must be at least 8, got {n}")
    if rule not in ("midpoint", "cell") or basis not in ("operator", "amplitude"):
        raise ValidationError(f"unknown rule/basis {rule!r}/{basis!r}")
    dt = op.T / n
    if rule == "midpoint":
        t = (np.arange(n) + 0.5) * dt
        a = dt * op.kernel(t[:, None], t[None, :])
    else:
        edges = _cell_edges(op.T, n)
        a = sum((_cell_matrix(term, edges) for term in op.terms), np.zeros((n, n))) / dt
    a = 0.5 * (a + a.T)
    if basis == "amplitude":
        a = dt * a
    if include_ell:
        if basis != "amplitude" or op.ell_block is None:
            raise ValidationError("drift-scale block needs basis='amplitude' and an ell_block")
        out = np.zeros((n + 1, n + 1))
        out[:n, :n] = a
        out[n, n] = op.ell_block
        a = out
    return a


def discretize_series(op, n, K=64, basis="operator"):
    """Midpoint realization of the truncated projector series of ``op``."""
    dt = op.T / n
    t = (np.arange(n) + 0.5) * dt
    a = np.zeros((n, n))
    for (fn, w), c in op.projector_series(K).items():
        b = np.ones(n) if fn == "1" else (np.sin(w * t) if fn == "sin" else np.cos(w * t))
        a += c * dt * np.outer(b, b)
    return a * dt if basis == "amplitude" else a


def definiteness(op_or_matrix, n=None, band=1e-8, **kw):
    """Classify the sign of a discretized operator.

    Eigenvalues within ``band * max|eig|`` of zero count as null.
    """
    if isinstance(op_or_matrix, KernelOperator):
        if n is None:
            raise ValidationError("grid size required for an operator")
        a = discretize(op_or_matrix, n, **kw)
    else:
        a = np.asarray(op_or_matrix, dtype=float)
    ev = np.linalg.eigvalsh(0.5 * (a + a.T))
    scale = float(np.max(np.abs(ev))) if ev.size else 0.0
    cut = band * scale
    lo, hi = float(ev[0]), float(ev[-1])
    if hi < -cut:
        verdict, margin = "negative_definite", -hi
    elif lo > cut:
        verdict, margin = "positive_definite", lo
    elif hi <= cut:
        verdict, margin = "negative_semidefinite", cut - hi
    elif lo >= -cut:
        verdict, margin = "positive_semidefinite", lo + cut
    else:
        verdict, margin = "indefinite", min(-lo, hi)
    return DefinitenessReport(a.shape[0], lo, hi, verdict, float(margin))


def series_verdict(op, K=64):
    """Sign of ``op`` from its projector series on the period-``T`` Fourier basis.

    Every basis coefficient up to ``k = K`` is checked explicitly; for
    ``k > K`` only sine tails contribute and share the sign of the total
    sine weight.  Extra projectors off the basis must be nonpositive.
    """
    series = op.projector_series(K)
    w0 = 2 * op.base_omega
    basis, extra = {}, {}
    for (fn, w), c in series.items():
        k = w / w0 if w else 0.0
        on_basis = fn == "1" or (abs(k - round(k)) < 1e-9 and round(k) >= 1)
        (basis if on_basis else extra)[(fn, w)] = c
    need = [("1", 0.0)] + [(fn, round(2 * k * op.base_omega, 12))
                            for k in range(1, K + 1) for fn in ("sin", "cos")]
    coeffs = [basis.get(key, 0.0) for key in need]
    tail = op.sine_weight()
    if all(c < 0 for c in coeffs) and tail < 0 and all(c <= 0 for c in extra.values()):
        return "negative_definite", max(coeffs)
    if all(c <= 0 for c in coeffs) and tail <= 0 and all(c <= 0 for c in extra.values()):
        return "negative_semidefinite", max(coeffs)
    return "not_negative", max(coeffs)


# -- closed-form Hessians of the registry examples ----------------------------


def _saddle4(theta=math.pi / 6, phi=math.pi / 3, T=2 * math.pi, **_):
    registry("saddle4", theta=theta, phi=phi, T=T)
    pref = -2 * math.cos(theta - phi)
    terms = [KernelTerm("cos", 2.0, pref * math.cos(theta) * math.cos(phi)),
             KernelTerm("cos", 4.0, pref * math.sin(theta) * math.sin(phi))]
    return KernelOperator(T, terms, "saddle4")


def _trap4(theta=math.pi / 3, b=3.0, eps=0.2, **_):
    registry("trap4", theta=theta, b=b, eps=eps)
    T = math.pi / eps
    c2 = math.cos(theta) ** 2
    terms = [KernelTerm("const", 0.0, -b**2 * c2),
             KernelTerm("cos", eps, -c2),
             KernelTerm("sin", eps, -math.cos(theta) * math.sin(theta))]
    a0 = -b**2 * c2 - 0.5 * math.sin(2 * theta) * S_CONST
    return KernelOperator(T, terms, "trap4", info={
        "a0": a0,
        "a0_pinned": 2 / math.pi * math.sin(2 * theta) - b**2 * c2,
        "ak": lambda k: -2 * math.sin(2 * theta) / (math.pi * (4 * k * k - 1)),
    })


def _unitary_trap3(case="-", eps=0.2, **override):
    override.pop("S", None)
    prob = registry("unitary_trap3", case=case, eps=eps, **override)
    p = prob.params
    k = egconsts(case, p["a"], p["b"], p["c"], p["phi"], p["gamma"])
    T = math.pi / eps
    terms = [KernelTerm("sin", eps, k["x"] / 3),
             KernelTerm("const", 0.0, -k["q"] / 3),
             KernelTerm("cos", 1.0, k["y"] / 3),
             KernelTerm("cos", eps, -k["z"] / 3)]
    return KernelOperator(T, terms, "unitary_trap3", info=k)


def _vartime4(eps=0.2, gamma=0.0, **_):
    prob = registry("vartime4", eps=eps, gamma=gamma)
    r, c = prob.params["r"], prob.params["c"]
    T = math.pi / eps
    q = 0.5 * c**2 + 4.5 * r
    c1 = 1 + 1 / math.sqrt(3)
    terms = [KernelTerm("const", 0.0, -q / 4),
             KernelTerm("cos", 1.0, -c1 / 4),
             KernelTerm("cos", eps, -r / 4),
             KernelTerm("sin", eps, -1 / 4)]
    bound = r * (1 + eps) ** 2 + 2 + 4.5 * r
    return KernelOperator(T, terms, "vartime4", ell_block=-bound * T**2 / 4, ell_bound=bound,
                          info={"q": q, "c1": c1, "const_total": q + S_CONST,
                                "const_pinned": q + S_CONST_PINNED})


EXAMPLE_OPERATORS = {
    "saddle4": _saddle4,
    "trap4": _trap4,
    "unitary_trap3": _unitary_trap3,
    "vartime4": _vartime4,
}


def example_hessian_operator(id, **params):
    """Closed-form Hessian operator at the critical control of a registry example.

    Operators are normalized as the true second derivative of the fidelity,
    so ``discretize(op, S, rule="cell", basis="amplitude")`` is directly
    comparable with the exact amplitude Hessian.
    """
    try:
        build = EXAMPLE_OPERATORS[id]
    except KeyError:
        raise ValidationError(f"no closed-form operator for {id!r}; known: {sorted(EXAMPLE_OPERATORS)}") from None
    return build(**params)
