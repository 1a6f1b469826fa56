"""Gradient-based and sequential optimizers over piecewise-constant controls.

:func:`bfgs_run` is a dense inverse-Hessian BFGS method with a strong Wolfe
line search on the error ``1 - F``.  Successful runs keep iterating after the
error threshold is crossed (the "Newton stage") until the fidelity gain per
iteration falls below ``newton_tol``, so terminal errors of good runs sit many
orders of magnitude below those of trapped runs.

:func:`sequential_run` updates one amplitude at a time by golden-section
maximization, reusing cached forward and backward propagators.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .propagate import PiecewiseControl, propagate, value_and_gradient
from .qcore import ValidationError

REASONS = ("threshold", "max_iters", "stalled", "line_search_failure")


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 1000
    threshold: float = 1e-4
    c1: float = 1e-4
    c2: float = 0.9
    stall_window: int = 50
    stall_tol: float = 1e-9
    max_bisections: int = 40
    # Newton stage after the threshold is met
    newton_stage: bool = True
    newton_tol: float = 1e-12
    newton_window: int = 10
    newton_iters: int = 1000
    error_floor: float = 1e-12
    check_invariants: bool = False

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValidationError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_iters < 0 or self.stall_window < 1:
            raise ValidationError("iteration limits must be positive")


@dataclass(frozen=True, eq=False)
class RunRecord:
    seed: int | None
    init: PiecewiseControl
    final: PiecewiseControl
    history: np.ndarray
    terminal_error: float
    iterations: int
    reason: str
    wall_time: float
    gradient_norm: float
    threshold_iteration: int | None = None
    method: str = "bfgs"
    evaluations: int = 0

    @property
    def success(self):
        return self.threshold_iteration is not None


class LineSearchError(ArithmeticError):
    pass


def _strong_wolfe(phi, phi0, dphi0, c1, c2, max_bisections, alpha1=1.0, alpha_max=1e3):
    """Strong Wolfe line search (bracketing then zoom with cubic interpolation).

    ``phi(alpha)`` returns ``(value, slope, payload)``.
    """
    a_prev, f_prev, d_prev = 0.0, phi0, dphi0
    a = alpha1
    for i in range(max_bisections):
        f, d, pay = phi(a)
        if not np.isfinite(f):
            a = 0.5 * (a_prev + a)
            continue
        if f > phi0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            return _zoom(phi, phi0, dphi0, a_prev, f_prev, d_prev, a, f, d, c1, c2, max_bisections)
        if abs(d) <= -c2 * dphi0:
            return a, f, d, pay
        if d >= 0:
            return _zoom(phi, phi0, dphi0, a, f, d, a_prev, f_prev, d_prev, c1, c2, max_bisections)
        if a >= alpha_max:
            raise LineSearchError(f"step reached alpha_max = {alpha_max} without a bracket")
        a_prev, f_prev, d_prev = a, f, d
        a = min(2.0 * a, alpha_max)
    raise LineSearchError("no bracket found")


def _cubic_min(a, fa, da, b, fb, db):
    if a == b:
        return None
    d1 = da + db - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _zoom(phi, phi0, dphi0, lo, flo, dlo, hi, fhi, dhi, c1, c2, max_bisections):
    for _ in range(max_bisections):
        a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
        left, right = min(lo, hi), max(lo, hi)
        width = right - left
        if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
            a = 0.5 * (lo + hi)
        f, d, pay = phi(a)
        if f > phi0 + c1 * a * dphi0 or f >= flo:
            hi, fhi, dhi = a, f, d
        else:
            if abs(d) <= -c2 * dphi0:
                return a, f, d, pay
            if d * (hi - lo) >= 0:
                hi, fhi, dhi = lo, flo, dlo
            lo, flo, dlo = a, f, d
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    raise LineSearchError(f"zoom failed after {max_bisections} bisections")


def bfgs_run(sys, obj, init, opts=None, seed=None, callback=None):
    """Maximize the fidelity from ``init`` with BFGS.

    Returns a :class:`RunRecord` whose ``history`` holds the error ``1 - F``
    at iteration 0 and after every accepted step.
    """
    opts = opts or OptimizerOptions()
    t0 = time.perf_counter()
    x = init.flat()
    n_eval = 0

    def err_grad(xv):
        nonlocal n_eval
        n_eval += 1
        val, g = value_and_gradient(sys, init.with_flat(xv), obj)
        return 1.0 - val, -g

    e, g = err_grad(x)
    hist = [e]
    hinv = None
    reason = None
    hit = 0 if e < opts.threshold else None
    it = 0
    newton_count = 0
    while True:
        gnorm = float(np.linalg.norm(g))
        if hit is not None:
            window_gain = hist[-1 - opts.newton_window] - e if newton_count >= opts.newton_window else math.inf
            if not opts.newton_stage or e < opts.error_floor or window_gain < opts.newton_tol \
                    or newton_count >= opts.newton_iters:
                reason = "threshold"
                break
        else:
            if it >= opts.max_iters:
                reason = "max_iters"
                break
            if len(hist) > opts.stall_window:
                past = hist[-1 - opts.stall_window]
                gain = past - e
                if gain < opts.stall_tol * max(1.0 - e, 1e-300):
                    reason = "stalled"
                    break
        if gnorm == 0.0 or not np.isfinite(gnorm):
            reason = "threshold" if hit is not None else "stalled"
            break
        p = -g if hinv is None else -(hinv @ g)
        slope = float(g @ p)
        if slope >= 0:
            # lost descent (numerical); restart from steepest descent
            hinv = None
            p, slope = -g, -gnorm**2
        alpha1 = 1.0 if hinv is not None else min(1.0, 1.0 / gnorm)

        def phi(a):
            xe = x + a * p
            ee, ge = err_grad(xe)
            return ee, float(ge @ p), (xe, ge)

        try:
            a, e_new, _, (x_new, g_new) = _strong_wolfe(
                phi, e, slope, opts.c1, opts.c2, opts.max_bisections, alpha1)
        except LineSearchError:
            reason = "threshold" if hit is not None else "line_search_failure"
            break
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if opts.check_invariants:
            assert e_new <= e + opts.c1 * a * slope + 1e-15
            assert abs(float(g_new @ p)) <= -opts.c2 * slope * (1 + 1e-12)
            assert sy > 0
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if hinv is None:
                hinv = np.eye(x.size) * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
            if opts.check_invariants:
                assert np.allclose(hinv, hinv.T, atol=1e-10 * np.max(np.abs(hinv)))
                assert np.linalg.eigvalsh(0.5 * (hinv + hinv.T)).min() > 0
        x, g, e = x_new, g_new, e_new
        it += 1
        hist.append(e)
        if callback is not None:
            callback(it, e)
        if hit is None and e < opts.threshold:
            hit = it
        elif hit is not None:
            newton_count += 1
    final = init.with_flat(x)
    return RunRecord(seed, init, final, np.array(hist), float(hist[-1]), it, reason,
                     time.perf_counter() - t0, float(np.linalg.norm(g)), hit, "bfgs", n_eval)


# -- sequential single-amplitude updates ----------------------------------------

_GOLD = (math.sqrt(5) - 1) / 2


def golden_max(fun, lo, hi, iters=32):
    """Golden-section maximization on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = fun(d)
    return (c, fc) if fc >= fd else (d, fd)


def _slice_unitary(sys, ell, amps, dt):
    h = ell * sys.H0 + np.einsum("r,rij->ij", amps, sys.control_stack)
    lam, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * lam)) @ v.conj().T


def sequential_run(sys, obj, init, opts=None, seed=None, radius=2.0, golden_iters=32):
    """Sweep slices in time order, maximizing each amplitude in turn.

    Each one-dimensional search covers ``a +/- radius`` and a new value is
    accepted only if it does not lower the fidelity, so every sweep is
    monotone.  ``opts.max_iters`` counts sweeps.
    """
    opts = opts or OptimizerOptions(max_iters=200)
    t0 = time.perf_counter()
    amps = np.array(init.amplitudes)
    S, dt, n = init.S, init.dt, sys.dim
    traj = propagate(sys, init)
    us = traj.slice_unitaries.copy()
    f_cur = obj.value(traj.endpoint)
    hist = [1.0 - f_cur]
    hit = 0 if hist[0] < opts.threshold else None
    reason = "max_iters"
    n_eval = 0
    sweeps = 0
    while sweeps < opts.max_iters:
        if hit is not None:
            reason = "threshold"
            break
        # backward products B[s] = U_S ... U_{s+1}
        back = np.empty((S + 1, n, n), dtype=complex)
        back[S] = np.eye(n)
        for s in range(S - 1, -1, -1):
            back[s] = back[s + 1] @ us[s]
        fwd = np.eye(n, dtype=complex)
        for s in range(S):
            b = back[s + 1]
            for r in range(init.M):
                col = amps[:, s].copy()

                def fid(v):
                    col[r] = v
                    return obj.value(b @ _slice_unitary(sys, init.ell, col, dt) @ fwd)

                base = amps[r, s]
                v_best, f_best = golden_max(fid, base - radius, base + radius, golden_iters)
                n_eval += golden_iters + 2
                if f_best > f_cur:
                    amps[r, s], f_cur = v_best, f_best
                col[r] = amps[r, s]
            us[s] = _slice_unitary(sys, init.ell, amps[:, s], dt)
            fwd = us[s] @ fwd
        # refresh against drift from incremental products
        f_cur = obj.value(fwd)
        sweeps += 1
        hist.append(1.0 - f_cur)
        if hit is None and hist[-1] < opts.threshold:
            hit = sweeps
        if len(hist) > opts.stall_window and hist[-1 - opts.stall_window] - hist[-1] < opts.stall_tol:
            reason = "stalled"
            break
    if hit is not None:
        reason = "threshold"
    final = replace(init, amplitudes=amps)
    _, g = value_and_gradient(sys, final, obj)
    return RunRecord(seed, init, final, np.array(hist), float(hist[-1]), sweeps, reason,
                     time.perf_counter() - t0, float(np.linalg.norm(g)), hit, "sequential", n_eval)


# -- multi-start campaigns ------------------------------------------------------


@dataclass(frozen=True)
class BatchConfig:
    problem: str = "qft3"
    runs: int = 100
    seed_base: int = 0
    method: str = "bfgs"
    threshold: float = 1e-4
    slices: int | None = None
    max_iters: int = 1000
    problem_params: dict = field(default_factory=dict)

    def options(self):
        return OptimizerOptions(max_iters=self.max_iters, threshold=self.threshold)


@dataclass(frozen=True, eq=False)
class BatchStats:
    runs: int
    successes: int
    threshold: float
    terminal_errors: np.ndarray
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    cumulative_errors: np.ndarray
    cumulative_counts: np.ndarray
    records: tuple = field(repr=False, default=())

    @property
    def success_fraction(self):
        return self.successes / self.runs if self.runs else float("nan")

    def failed(self):
        return [r for r in self.records if not r.success]


def random_init(problem, seed, slices=None):
    """Standard-normal amplitudes from ``default_rng(seed)``."""
    S = slices or problem.params.get("S", 64)
    rng = np.random.default_rng(seed)
    return PiecewiseControl(problem.target_time, rng.standard_normal((problem.system.M, S)))


def single_run(config, index):
    """Run ``index`` of a campaign; importable so worker processes can call it."""
    from .sysmodel import registry

    prob = registry(config.problem, **config.problem_params)
    seed = config.seed_base + index
    init = random_init(prob, seed, config.slices)
    run = {"bfgs": bfgs_run, "sequential": sequential_run}.get(config.method)
    if run is None:
        raise ValidationError(f"unknown method {config.method!r}")
    return run(prob.system, prob.objective, init, config.options(), seed=seed)


def error_histogram(errors, lo=1e-16, hi=1.0, per_decade=2):
    decades = int(round(math.log10(hi / lo)))
    edges = np.logspace(math.log10(lo), math.log10(hi), decades * per_decade + 1)
    clipped = np.clip(errors, lo, hi)
    counts, _ = np.histogram(clipped, bins=edges)
    return edges, counts


def summarize(records, threshold):
    errs = np.array([r.terminal_error for r in records])
    edges, counts = error_histogram(errs)
    order = np.sort(errs)
    return BatchStats(len(records), int(np.sum(errs < threshold)), threshold, errs, edges, counts,
                      order, np.arange(1, len(order) + 1), tuple(records))


def batch_campaign(config, map_fn=map, on_record=None):
    """Independent seeded runs and their aggregate statistics.

    ``map_fn`` may be a parallel map (results must come back in index
    order); ``on_record(index, record)`` is called as records arrive.
    """
    if config.runs < 1:
        raise ValidationError("need at least one run")
    records = []
    idx = list(range(config.runs))
    for i, rec in zip(idx, map_fn(single_run, [config] * config.runs, idx)):
        records.append(rec)
        if on_record is not None:
            on_record(i, rec)
    return summarize(records, config.threshold)


def record_summary(rec):
    """Plain-data view of a run record (controls as nested lists)."""
    return {
        "seed": rec.seed,
        "method": rec.method,
        "terminal_error": rec.terminal_error,
        "iterations": rec.iterations,
        "reason": rec.reason,
        "threshold_iteration": rec.threshold_iteration,
        "gradient_norm": rec.gradient_norm,
        "evaluations": rec.evaluations,
        "history": rec.history.tolist(),
    }


def options_dict(opts):
    return asdict(opts)
