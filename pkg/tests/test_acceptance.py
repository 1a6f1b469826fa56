"""Acceptance criteria with pinned tolerances.

Every check returns ``(passed, detail)``.  Under pytest each criterion is one
parametrized case and the terminal summary lists one PASS/FAIL line per
criterion; ``python3 tests/test_acceptance.py [--fast]`` prints the same lines.

Three clauses are known to be unattainable because the target value they pin
disagrees with an exact computation.  They run unchanged, print FAIL, and are
marked strict xfail so an unexpected pass is reported as an error.
"""

import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from landscape_lab import ControlSystem, Gate, Observable, PiecewiseControl, PureState, registry
from landscape_lab.critical import (
    dae_seed,
    dae_solve,
    density_hessian,
    hessian_spectrum,
    indicator_direction,
    third_order_probe,
)
from landscape_lab.grouplandscape import kinematic_classify
from landscape_lab.kernels import build_S, discretize, example_hessian_operator, s_coefficient
from landscape_lab.kernels import S_CONST_PINNED
from landscape_lab.optimize import BatchConfig, batch_campaign
from landscape_lab.propagate import (
    fidelity,
    objective_gradient,
    objective_hessian,
    propagate,
    value_and_gradient,
)
from landscape_lab.qcore import dagger, random_hermitian, random_state, random_unitary
from landscape_lab.trapscan import perturb_sample, refine_mesh, restart_probe

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:
    ACCEPTANCE_LINES = []


def _spectrum(p):
    f = p.critical_control
    return hessian_spectrum(density_hessian(f, objective_hessian(p.system, f, p.objective)))


def _check(conds):
    """Combine ``[(ok, text)]`` into a single verdict and detail string."""
    return all(ok for ok, _ in conds), "; ".join(t for _, t in conds if t)


# -- 1: closed-form examples ---------------------------------------------------------


def crit_1a():
    conds = []
    for T in (math.pi, 2 * math.pi):
        p = registry("eigenstate3", T=T)
        _, g = p.check()
        conds.append((g < 1e-10, f"|grad|(T={T:.4f})={g:.1e}"))
    for T in (math.pi / 2, math.pi, 2 * math.pi):
        p = registry("eigenstate3", T=T)
        val, _ = p.check()
        ref = 8 / 9 * math.sin(T / 2) ** 4
        conds.append((abs(val - ref) < 1e-10, f"F(T={T:.4f}) err={abs(val - ref):.1e}"))
    _, g = registry("eigenstate3", T=math.pi / 2).check()
    ok, detail = _check(conds)
    return ok, detail + f"; info: |grad|(T=pi/2)={g:.3f}, critical only for T in pi Z"


def crit_1b():
    p = registry("saddle4", theta=math.pi / 6, phi=math.pi / 3, S=200)
    val, _ = p.check()
    spec = _spectrum(p)
    n_neg = int(np.sum(spec.eigenvalues < -1e-3))
    return _check([(abs(val - 0.75) < 1e-10, f"F err={abs(val - 0.75):.1e}"),
                   (spec.max <= 1e-8, f"max eig={spec.max:.1e}"),
                   (n_neg == 4, f"{n_neg} eigs below -1e-3")])


def crit_1b_third_order():
    theta, phi = math.pi / 6, math.pi / 3
    p = registry("saddle4", theta=theta, phi=phi, S=200)
    f = p.critical_control
    val = third_order_probe(p.system, p.objective, f, indicator_direction(f, 0.0, math.pi))
    target = 4 / 7 * math.sin(2 * (theta - phi))
    exact = -32 / 35 * math.sin(2 * (theta - phi))
    rel = abs(val - target) / abs(target)
    return rel < 0.02, (f"probe={val:.6f} target={target:.6f} rel err={rel:.2f}; "
                        f"exact third derivative -(32/35)sin(2(theta-phi))={exact:.6f}, "
                        f"rel err {abs(val - exact) / abs(exact):.1e}")


def crit_1c():
    conds = []
    p = registry("trap4", theta=math.pi / 3, b=3.0, eps=0.2)
    val, _ = p.check()
    conds.append((abs(val - 0.25) < 1e-10, f"F err={abs(val - 0.25):.1e}"))
    for S in (100, 200, 400):
        spec = _spectrum(registry("trap4", theta=math.pi / 3, b=3.0, eps=0.2, S=S))
        conds.append((spec.count_positive == 0 and spec.count_null == 0 and spec.max < -1e-4,
                      f"S={S} max eig={spec.max:.2e}"))
    return _check(conds)


def crit_1d():
    conds = []
    for case in ("-", "+"):
        p = registry("unitary_trap3", case=case)
        val, g = p.check()
        u = propagate(p.system, p.critical_control).endpoint
        direct = float(np.real(np.trace(dagger(p.objective.V) @ u))) / 3
        spec = _spectrum(p)
        conds += [(g < 1e-10, f"({case}) |grad|={g:.1e}"),
                  (spec.count_positive == 0 and spec.count_null == 0, f"max eig={spec.max:.2e}"),
                  (abs(val - direct) < 1e-12 and abs(val - p.expected_fidelity) < 1e-10,
                   f"F={val:.10f}")]
    return _check(conds)


def crit_1e():
    p = registry("vartime4")
    _, g = p.check()
    spec = _spectrum(p)
    return _check([(g < 1e-8, f"|grad (ell, f)|={g:.1e}"),
                   (spec.count_positive == 0 and spec.count_null == 0,
                    f"extended Hessian max eig={spec.max:.2e}")])


def crit_1e_fidelity():
    p = registry("vartime4")
    val, _ = p.check()
    target = (33 - 2 * math.sqrt(3)) / 48
    exact = (18 - 4 * math.sqrt(3)) / 48
    return abs(val - target) < 1e-9, (f"F={val:.10f} target={target:.10f}; "
                                      f"exact (18-4sqrt3)/48={exact:.10f}")


# -- 2: Hessian against closed-form operators ---------------------------------------


def crit_2():
    conds = []
    for pid, kw in (("saddle4", {}), ("trap4", {}), ("unitary_trap3", {}),
                    ("unitary_trap3", {"case": "+"}), ("vartime4", {})):
        p = registry(pid, S=200, **kw)
        h = objective_hessian(p.system, p.critical_control, p.objective)
        op = example_hessian_operator(pid, **kw)
        a = discretize(op, 200, rule="cell", basis="amplitude", include_ell=op.ell_block is not None)
        err = float(np.abs(h - a).max() / np.abs(h).max())
        conds.append((err < 1e-4, f"{pid}{kw.get('case', '')} {err:.1e}"))
    return _check(conds)


# -- 3: derivative oracles ----------------------------------------------------------


def _random_instance(rng):
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, 3))
    S = int(rng.integers(2, 65))
    sys_ = ControlSystem(random_hermitian(n, rng), tuple(random_hermitian(n, rng) for _ in range(m)))
    kind = rng.integers(4)
    if kind == 0:
        obj = PureState(random_state(n, rng), random_state(n, rng))
    elif kind == 1:
        obj = Observable(np.diag(rng.dirichlet(np.ones(n))).astype(complex), random_hermitian(n, rng))
    else:
        obj = Gate(random_unitary(n, rng), ("U", "PU")[kind - 2])
    f = PiecewiseControl(float(rng.uniform(0.5, 3.0)), rng.normal(size=(m, S)),
                         ell=float(rng.uniform(0.5, 1.5)), variable_time=bool(rng.integers(2)))
    return sys_, f, obj


def crit_3():
    rng = np.random.default_rng(3)
    worst_g = worst_h = 0.0
    for _ in range(100):
        sys_, f, obj = _random_instance(rng)
        x0 = f.flat()
        g = objective_gradient(sys_, f, obj)
        h = objective_hessian(sys_, f, obj)
        eye = np.eye(x0.size)
        hg, hh = 1e-6, 1e-5
        gfd = np.array([(fidelity(sys_, f.with_flat(x0 + hg * e), obj)
                         - fidelity(sys_, f.with_flat(x0 - hg * e), obj)) / (2 * hg) for e in eye])
        hfd = np.array([(objective_gradient(sys_, f.with_flat(x0 + hh * e), obj)
                         - objective_gradient(sys_, f.with_flat(x0 - hh * e), obj)) / (2 * hh)
                        for e in eye])
        worst_g = max(worst_g, np.abs(g - gfd).max() / np.abs(g).max())
        worst_h = max(worst_h, np.abs(h - hfd).max() / np.abs(h).max())
    return _check([(worst_g < 1e-6, f"worst gradient rel err={worst_g:.1e}"),
                   (worst_h < 1e-5, f"worst Hessian rel err={worst_h:.1e}")])


# -- 4: group landscape ---------------------------------------------------------------


def crit_4():
    rng = np.random.default_rng(4)
    conds = []
    v = random_unitary(4, rng)
    q = random_unitary(4, rng)
    expected = {0: "global_max", 1: "saddle", 2: "saddle", 3: "saddle", 4: "global_min"}
    seen = []
    for d, label in expected.items():
        w = q @ np.diag([-1.0] * d + [1.0] * (4 - d)) @ dagger(q)
        rep = kinematic_classify(Gate(v, "U"), v @ w)
        seen.append(rep.critical_value)
        conds.append((rep.is_critical and rep.classification == label
                      and abs(rep.critical_value - (1 - d / 2)) < 1e-12, ""))
    v8 = random_unitary(8, rng)
    v8 = v8 / np.linalg.det(v8) ** (1 / 8)
    rep = kinematic_classify(Gate(v8, "SU"), np.exp(2j * math.pi / 8) * v8)
    conds.append((rep.classification == "attractive_suboptimal"
                  and abs(rep.critical_value - math.cos(math.pi / 4)) < 1e-12,
                  f"SU(8) k=1: {rep.classification} {rep.critical_value:.6f}"))
    pu = [kinematic_classify(Gate(v, "PU"), np.exp(1j * a) * v).classification
          for a in np.linspace(0, 2 * math.pi, 13)]
    conds.append((all(c == "global_max" for c in pu), f"PU phases: {len(pu)} global_max"))
    conds[0] = (conds[0][0], "U(4) values " + ", ".join(f"{s:g}" for s in seen))
    return _check(conds)


# -- 5: desk-scale campaign -----------------------------------------------------------


def crit_5():
    cfg = BatchConfig(problem="qft3", runs=100, seed_base=0, threshold=1e-4)
    workers = int(os.environ.get("LANDSCAPE_LAB_THREADS", os.cpu_count() or 1))
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            stats = batch_campaign(cfg, map_fn=pool.map)
    else:
        stats = batch_campaign(cfg)
    wall = time.perf_counter() - t0
    errs = stats.terminal_errors
    ok_mask = np.array([r.success for r in stats.records])
    succ, fail = errs[ok_mask], errs[~ok_mask]
    worst_succ = float(succ.max()) if succ.size else math.nan
    best_fail = float(fail.min()) if fail.size else math.inf
    gap = math.log10(best_fail / max(worst_succ, 1e-300)) if fail.size else math.inf
    return _check([
        (stats.success_fraction >= 0.85, f"success {stats.successes}/100"),
        (worst_succ < 1e-7, f"worst success error={worst_succ:.1e}"),
        (best_fail >= 1e-3, f"failed plateaus >= {best_fail:.2e}" if fail.size else "no failures"),
        (gap >= 4, f"separation {gap:.1f} decades"),
        (True, f"{wall:.0f} s with {workers} worker(s)"),
    ])


# -- 6: trap forensics ------------------------------------------------------------------


def crit_6():
    p = registry("trap4")
    f = p.critical_control
    rng = np.random.default_rng(6)
    s = perturb_sample(p.system, p.objective, f, n=2000, scale=0.01, rng=rng)
    r = restart_probe(p.system, p.objective, f, delta_scale=0.1, runs=10, rng=rng)
    m = refine_mesh(p.system, p.objective, f, factor=3)
    return _check([(s.fraction_below == 1.0, f"fraction below={s.fraction_below}"),
                   (r.escapes == 0, f"escapes={r.escapes}/10"),
                   (m.improvement < 0.5, f"refinement improvement={m.improvement:.1e}")])


# -- 7: non-constant critical control -------------------------------------------------


def crit_7():
    from landscape_lab.expcli import random_four_level

    rng = np.random.default_rng(7)
    system = random_four_level(rng)
    psi0 = random_state(4, rng)
    seeds, _ = dae_seed(system, psi0, rng)
    sol = dae_solve(system, psi0, seeds[0], 1.0, 1e-3)
    fc = sol.as_piecewise(400)
    _, g = value_and_gradient(system, fc, sol.objective())
    gn = float(np.linalg.norm(g))
    return _check([(sol.reason == "completed" and sol.nonconstant, f"{sol.reason}, non-constant"),
                   (gn < 1e-4, f"S=400 |grad|={gn:.1e}"),
                   (abs(sol.fidelity - sol.seed_fidelity) < 1e-8,
                    f"F - |<b|0>|^2 = {sol.fidelity - sol.seed_fidelity:.1e}")])


# -- 8: sine-kernel spectrum ------------------------------------------------------------


def _s_spectrum(T=math.pi, n=512):
    ev = np.linalg.eigvalsh(discretize(build_S(T), n))
    neg = ev[ev < 0]
    pos = np.sort(ev[ev > 0])[::-1]
    return T, neg, pos


def crit_8_terms():
    T, _, pos = _s_spectrum()
    worst = 0.0
    for k in range(1, 8):
        ref = s_coefficient(k) * T / 2
        worst = max(worst, *(abs(pos[2 * k - 2 + j] - ref) / ref for j in (0, 1)))
    return worst < 0.01, f"series terms k=1..7, worst rel err={worst:.1e}"


def crit_8_first_term():
    T, neg, _ = _s_spectrum()
    target = S_CONST_PINNED * T
    got = neg[0] if neg.size == 1 else math.nan
    rel = abs(got - target) / abs(target)
    return rel < 0.01, (f"constant mode eig/T={got / T:.6f}, target {S_CONST_PINNED:.6f}, "
                        f"rel err {rel:.2f}; exact -2/pi={-2 / math.pi:.6f}")


CRITERIA = {
    "1a": crit_1a,
    "1b": crit_1b,
    "1b.third_order": crit_1b_third_order,
    "1c": crit_1c,
    "1d": crit_1d,
    "1e": crit_1e,
    "1e.fidelity": crit_1e_fidelity,
    "2": crit_2,
    "3": crit_3,
    "4": crit_4,
    "5": crit_5,
    "6": crit_6,
    "7": crit_7,
    "8.terms": crit_8_terms,
    "8.first_term": crit_8_first_term,
}
UNATTAINABLE = {"1b.third_order", "1e.fidelity", "8.first_term"}
SLOW = {"5"}


def run_criterion(cid):
    t0 = time.perf_counter()
    ok, detail = CRITERIA[cid]()
    tag = "PASS" if ok else "FAIL"
    note = " [known unattainable]" if cid in UNATTAINABLE and not ok else ""
    line = f"{tag}  {cid:<15} {detail}{note} ({time.perf_counter() - t0:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok, detail


def _params():
    out = []
    for cid in CRITERIA:
        marks = []
        if cid in UNATTAINABLE:
            marks.append(pytest.mark.xfail(strict=True, reason="pinned target disagrees with exact value"))
        if cid in SLOW:
            marks.append(pytest.mark.slow)
        out.append(pytest.param(cid, marks=marks, id=cid))
    return out


@pytest.mark.parametrize("cid", _params())
def test_criterion(cid):
    ok, detail = run_criterion(cid)
    assert ok, detail


if __name__ == "__main__":
    fast = "--fast" in sys.argv
    bad = 0
    for cid in CRITERIA:
        if fast and cid in SLOW:
            continue
        ok, _ = run_criterion(cid)
        bad += ok == (cid in UNATTAINABLE)
    sys.exit(1 if bad else 0)
