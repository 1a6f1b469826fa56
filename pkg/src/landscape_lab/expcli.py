"""Command-line entry point, problem files and result envelopes.

This is the only module that touches the file system.  JSON documents carry
complex matrices as nested ``[re, im]`` pairs and floats in shortest
round-trip form; NaN and infinities are rejected both ways.  Result files are
written atomically (temporary file plus rename).

Exit codes: 0 success, 2 validation failure, 3 numeric failure, 64 usage
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .critical import (
    dae_seed,
    dae_solve,
    indicator_direction,
    third_order_probe,
    verify_critical,
)
from .grouplandscape import Gate, Observable, PureState, kinematic_classify, sun_trap_ceiling
from .kernels import (
    build_C,
    build_S,
    definiteness,
    discretize,
    example_hessian_operator,
)
from .optimize import (
    BatchConfig,
    OptimizerOptions,
    bfgs_run,
    error_histogram,
    random_init,
    record_summary,
    sequential_run,
    single_run,
)
from .propagate import PiecewiseControl, propagate, value_and_gradient
from .qcore import ValidationError, random_hermitian, random_state
from .sysmodel import REGISTRY, ControlSystem, ExampleProblem, larc_classify, registry, theorem2_construct
from .trapscan import (
    cumulative_rows,
    histogram_rows,
    history_rows,
    perturb_sample,
    refine_mesh,
    restart_probe,
    scatter_rows,
)

SCHEMA_VERSION = 1
PROBLEM_SCHEMA = "landscape-lab/problem"
RESULT_SCHEMA = "landscape-lab/result"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_USAGE = 0, 2, 3, 64


class SchemaVersionError(ValidationError):
    """Document written by an incompatible schema version."""


# -- JSON helpers -------------------------------------------------------------------


def _reject_constant(name):
    raise ValidationError(f"non-finite number {name} in document")


def loads(text):
    return json.loads(text, parse_constant=_reject_constant)


def dumps(doc):
    try:
        return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"
    except ValueError as exc:
        raise ValidationError(f"refusing to serialize non-finite value: {exc}") from None


def encode_matrix(m):
    m = np.asarray(m, dtype=complex)
    if m.ndim == 1:
        return [[float(z.real), float(z.imag)] for z in m]
    return [encode_matrix(row) for row in m]


def decode_matrix(data, name="matrix"):
    arr = np.asarray(data, dtype=float)
    if arr.ndim < 2 or arr.shape[-1] != 2:
        raise ValidationError(f"{name} must be nested [re, im] pairs, got shape {arr.shape}")
    out = np.empty(arr.shape[:-1], dtype=complex)
    out.real, out.imag = arr[..., 0], arr[..., 1]
    return out


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- problem files -------------------------------------------------------------------


def _objective_doc(obj):
    if isinstance(obj, Gate):
        return {"kind": "gate", "group": obj.group, "V": encode_matrix(obj.V)}
    if isinstance(obj, PureState):
        return {"kind": "pure", "psi0": encode_matrix(obj.psi0), "psig": encode_matrix(obj.psig)}
    return {"kind": "observable", "rho0": encode_matrix(obj.rho0), "A": encode_matrix(obj.A)}


def _objective_from(doc):
    kind = doc.get("kind")
    if kind == "gate":
        return Gate(decode_matrix(doc["V"], "V"), doc.get("group", "U"))
    if kind == "pure":
        return PureState(decode_matrix([doc["psi0"]], "psi0")[0], decode_matrix([doc["psig"]], "psig")[0])
    if kind == "observable":
        return Observable(decode_matrix(doc["rho0"], "rho0"), decode_matrix(doc["A"], "A"))
    raise ValidationError(f"unknown objective kind {kind!r}")


def problem_to_doc(prob, registry_id=None, params=None):
    """Serialize an :class:`ExampleProblem` to a problem document."""
    f = prob.critical_control
    doc = {
        "schema": PROBLEM_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "id": prob.id,
        "dim": prob.system.dim,
        "M": prob.system.M,
        "H0": encode_matrix(prob.system.H0),
        "controls": [encode_matrix(h) for h in prob.system.controls],
        "objective": _objective_doc(prob.objective),
        "T": prob.target_time,
        "S": int(f.S if f is not None else prob.params.get("S", 64)),
        "variable_time": bool(f.variable_time) if f is not None else False,
        "expected_fidelity": prob.expected_fidelity,
        "expected_class": prob.expected_class,
    }
    if registry_id is not None:
        doc["registry"] = {"id": registry_id, "params": params or {}}
    if f is not None:
        doc["control"] = {"amplitudes": f.amplitudes.tolist(), "ell": f.ell}
    return doc


def _check_version(doc, schema):
    if doc.get("schema") != schema:
        raise ValidationError(f"expected a {schema} document, got schema {doc.get('schema')!r}")
    v = doc.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"document schema_version {v!r} is not {SCHEMA_VERSION}; migrate it before loading")


def problem_from_doc(doc):
    """Rebuild an :class:`ExampleProblem`, validating every matrix by role."""
    _check_version(doc, PROBLEM_SCHEMA)
    h0 = decode_matrix(doc["H0"], "H0")
    ctrls = tuple(decode_matrix(h, f"H{m + 1}") for m, h in enumerate(doc["controls"]))
    if len(ctrls) != doc.get("M", len(ctrls)):
        raise ValidationError(f"M = {doc['M']} but {len(ctrls)} control matrices given")
    system = ControlSystem(h0, ctrls)
    if system.dim != doc.get("dim", system.dim):
        raise ValidationError(f"dim = {doc['dim']} but H0 is {system.dim}x{system.dim}")
    obj = _objective_from(doc["objective"])
    T = float(doc["T"])
    ctrl = None
    if doc.get("control") is not None:
        c = doc["control"]
        ctrl = PiecewiseControl(T, c["amplitudes"], c.get("ell", 1.0), bool(doc.get("variable_time", False)))
    params = {"S": int(doc.get("S", 64))}
    return ExampleProblem(doc.get("id", "custom"), system, obj, ctrl, doc.get("expected_fidelity"),
                          doc.get("expected_class"), T, params)


def load_problem(arg, slices=None):
    """Resolve ``--problem``: an existing JSON file or a registry id."""
    if arg is None:
        raise ValidationError("--problem is required")
    if not os.path.exists(arg):
        return registry(arg, **({"S": slices} if slices else {}))
    with open(arg) as fh:
        prob = problem_from_doc(loads(fh.read()))
    if slices:
        f = prob.critical_control
        if f is not None and f.S != slices:
            if slices % f.S:
                raise ValidationError(f"cannot re-grid {f.S} slices onto {slices}")
            prob = replace(prob, critical_control=f.resample(slices // f.S))
        prob = replace(prob, params=dict(prob.params, S=slices))
    return prob


def load_control(path, T=None):
    with open(path) as fh:
        doc = loads(fh.read())
    c = doc.get("control", doc)
    return PiecewiseControl(c.get("T", T), c["amplitudes"], c.get("ell", 1.0), c.get("variable_time", False))


def control_doc(f):
    return {"T": f.T, "amplitudes": f.amplitudes.tolist(), "ell": f.ell, "variable_time": f.variable_time}


# -- result envelopes ------------------------------------------------------------------


def envelope(command, config, payload, seeds=()):
    return {
        "schema": RESULT_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "library_version": __version__,
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "payload": payload,
    }


def load_envelope(text):
    doc = loads(text)
    _check_version(doc, RESULT_SCHEMA)
    for key in ("command", "config", "payload"):
        if key not in doc:
            raise ValidationError(f"envelope lacks {key!r}")
    return doc


def _plain(x):
    """Convert numpy scalars/arrays and dataclasses to JSON-ready values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if not math.isfinite(v):
            raise ValidationError(f"non-finite value {v} in result")
        return v
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# -- subcommands -------------------------------------------------------------------------


class Context:
    def __init__(self, args):
        self.args = args
        self.out = args.out
        self.lines = []

    def emit(self, name, text):
        if self.out:
            atomic_write(os.path.join(self.out, name), text)

    def say(self, line=""):
        self.lines.append(line)


def _report_dict(rep):
    spec = rep.hessian_spectrum
    k = rep.kinematic_report
    return {
        "gradient_norm": rep.gradient_norm,
        "classification": rep.classification,
        "fidelity": rep.fidelity,
        "hessian": {"min": spec.min, "max": spec.max, "negative": spec.count_negative,
                    "positive": spec.count_positive, "null": spec.count_null, "band": spec.band},
        "kinematic": None if k is None else {"is_critical": k.is_critical, "classification": k.classification,
                                             "critical_value": k.critical_value, "residual": k.residual},
    }


EXPECTED_LABEL = {"trap": ("trap_candidate",), "saddle": ("second_order_inconclusive", "saddle"),
                  "any-value-family": ("trap_candidate", "saddle", "second_order_inconclusive")}


def verify_example(pid, slices=None, **params):
    prob = registry(pid, **params)
    if slices:
        prob = registry(pid, S=slices, **params)
    rep = verify_critical(prob.system, prob.objective, prob.critical_control)
    fid_ok = abs(rep.fidelity - prob.expected_fidelity) < 1e-9
    label_ok = rep.classification in EXPECTED_LABEL[prob.expected_class]
    row = {"id": pid, "params": params, "gradient_norm": rep.gradient_norm,
           "verdict": rep.classification, "fidelity": rep.fidelity,
           "expected_fidelity": prob.expected_fidelity, "expected_class": prob.expected_class}
    if prob.expected_class == "saddle" and rep.classification == "second_order_inconclusive":
        f = prob.critical_control
        d = indicator_direction(f, 0.0, math.pi)
        row["third_order"] = third_order_probe(prob.system, prob.objective, f, d)
        label_ok = label_ok and abs(row["third_order"]) > 1e-6
    row["pass"] = bool(fid_ok and label_ok and rep.gradient_norm < 1e-8)
    return row


def cmd_verify_examples(ctx):
    a = ctx.args
    ids = [a.id] if a.id else ["eigenstate3", "saddle4", "trap4", "unitary_trap3", "vartime4"]
    rows = []
    for pid in ids:
        rows.append(verify_example(pid, a.slices))
        if pid == "unitary_trap3":
            rows.append(verify_example(pid, a.slices, case="+"))
    ctx.say(f"{'example':<20}{'|grad|':>12}{'verdict':>28}{'fidelity':>14}{'expected':>14}  result")
    for r in rows:
        label = r["id"] + (f"({r['params']['case']})" if r["params"] else "")
        ctx.say(f"{label:<20}{r['gradient_norm']:>12.2e}{r['verdict']:>28}{r['fidelity']:>14.10f}"
                f"{r['expected_fidelity']:>14.10f}  {'pass' if r['pass'] else 'FAIL'}")
    ok = all(r["pass"] for r in rows)
    return {"rows": rows, "all_pass": ok}, (EXIT_OK if ok else EXIT_NUMERIC)


def _target_unitary(ctx, prob):
    a = ctx.args
    if a.unitary:
        with open(a.unitary) as fh:
            return decode_matrix(loads(fh.read())["U"], "U")
    f = load_control(a.control, prob.target_time) if a.control else prob.critical_control
    if f is None:
        raise ValidationError("no control available: pass --control or --unitary")
    return propagate(prob.system, f).endpoint


def cmd_kinematic(ctx):
    prob = load_problem(ctx.args.problem, ctx.args.slices)
    rep = kinematic_classify(prob.objective, _target_unitary(ctx, prob))
    ctx.say(f"critical={rep.is_critical} value={rep.critical_value!r} class={rep.classification} "
            f"index={rep.manifold_index} residual={rep.residual:.3e}")
    return asdict(rep), EXIT_OK


def cmd_controllability(ctx):
    prob = load_problem(ctx.args.problem)
    v = larc_classify(prob.system, exact_time=ctx.args.exact_time)
    ctx.say(f"algebra_dim={v.algebra_dim} classification={v.classification} exact_time={v.exact_time}")
    return asdict(v), EXIT_OK


def cmd_theorem2(ctx):
    a = ctx.args
    prob = load_problem(a.problem)
    T = a.time if a.time is not None else prob.target_time
    res = theorem2_construct(prob.system, a.fidelity, T)
    f = PiecewiseControl.constant(T, a.slices or 64, res.mu)
    val, g = value_and_gradient(prob.system, f, PureState(res.psi0, res.psig))
    ctx.say(f"case={res.case} mu={res.mu!r} theta={res.theta!r} fidelity={val!r} |grad|={np.linalg.norm(g):.2e}")
    return {"mu": res.mu, "theta": res.theta, "case": res.case, "psi0": encode_matrix(res.psi0),
            "psig": encode_matrix(res.psig), "fidelity": val,
            "gradient_norm": float(np.linalg.norm(g))}, EXIT_OK


def random_four_level(rng):
    h0 = np.diag(np.sort(rng.uniform(0, 4, 4)))
    h1 = random_hermitian(4, rng).real.astype(complex)
    return ControlSystem(h0, (h1,))


def cmd_dae(ctx):
    a = ctx.args
    rng = np.random.default_rng(a.seed)
    if a.problem:
        prob = load_problem(a.problem)
        system = prob.system
        psi0 = prob.objective.psi0 if isinstance(prob.objective, PureState) else random_state(system.dim, rng)
    else:
        system = random_four_level(rng)
        psi0 = random_state(4, rng)
    seeds, rejected = dae_seed(system, psi0, rng)
    if not seeds:
        raise ArithmeticError(f"no admissible seed: {rejected[:3]}")
    sol = dae_solve(system, psi0, seeds[0], a.horizon, a.step)
    fc = sol.as_piecewise(a.slices or 400)
    _, g = value_and_gradient(system, fc, sol.objective())
    ctx.emit("dae_control.csv", csv_text(("t", "f"), sol.rows()))
    ctx.say(f"reason={sol.reason} horizon={sol.valid_horizon!r} fidelity={sol.fidelity!r} "
            f"seed_fidelity={sol.seed_fidelity!r} nonconstant={sol.nonconstant} "
            f"discrete |grad|={np.linalg.norm(g):.2e}")
    return {"reason": sol.reason, "valid_horizon": sol.valid_horizon, "fidelity": sol.fidelity,
            "seed_fidelity": sol.seed_fidelity, "max_residual": sol.max_residual,
            "nonconstant": sol.nonconstant, "discrete_gradient_norm": float(np.linalg.norm(g)),
            "psi0": encode_matrix(psi0), "psig": encode_matrix(sol.psig),
            "seed": encode_matrix(sol.seed), "rejected": len(rejected)}, EXIT_OK


def cmd_kernels(ctx):
    a = ctx.args
    n = a.n
    if a.operator == "C":
        op = build_C(a.omega, a.T)
    elif a.operator == "S":
        op = build_S(a.T, a.omega)
    else:
        op = example_hessian_operator(a.operator)
    mat = discretize(op, n, rule=a.rule)
    ev = np.linalg.eigvalsh(mat)
    rep = definiteness(mat)
    ctx.emit("matrix.json", dumps({"rows": n, "cols": n, "rule": a.rule, "T": op.T, "data": mat.tolist()}))
    ctx.say(f"n={n} verdict={rep.verdict} min={rep.min_eig!r} max={rep.max_eig!r}")
    k = min(a.top, n)
    order = np.argsort(-np.abs(ev))[:k]
    return {"verdict": rep.verdict, "min": rep.min_eig, "max": rep.max_eig, "margin": rep.margin,
            "T": op.T, "dominant_eigenvalues": ev[order].tolist()}, EXIT_OK


def _options(a):
    return OptimizerOptions(max_iters=a.max_iters, threshold=a.threshold)


def cmd_optimize(ctx):
    a = ctx.args
    prob = load_problem(a.problem, a.slices)
    init = load_control(a.control, prob.target_time) if a.control else random_init(prob, a.seed, a.slices)
    run = bfgs_run if a.method == "bfgs" else sequential_run
    opts = _options(a) if a.method == "bfgs" else OptimizerOptions(max_iters=a.sweeps, threshold=a.threshold)
    rec = run(prob.system, prob.objective, init, opts, seed=a.seed)
    ctx.emit("history.csv", csv_text(("iteration", "error"), enumerate(rec.history.tolist())))
    ctx.emit("final_control.json", dumps(control_doc(rec.final)))
    ctx.say(f"reason={rec.reason} terminal_error={rec.terminal_error!r} iterations={rec.iterations}")
    out = record_summary(rec)
    out["final_control"] = control_doc(rec.final)
    return out, EXIT_OK


def _workers():
    env = os.environ.get("LANDSCAPE_LAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"LANDSCAPE_LAB_THREADS must be an integer, got {env!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def _batch_payload(summaries, threshold):
    errs = np.array([s["terminal_error"] for s in summaries])
    edges, counts = error_histogram(errs)
    order = np.sort(errs)
    succ = int(np.sum(errs < threshold))
    return {
        "runs": len(summaries),
        "successes": succ,
        "success_fraction": succ / len(summaries),
        "threshold": threshold,
        "terminal_errors": errs.tolist(),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        "cumulative": {"errors": order.tolist(), "counts": list(range(1, len(order) + 1))},
        "records": summaries,
    }


def cmd_batch(ctx):
    a = ctx.args
    cfg = BatchConfig(problem=a.problem, runs=a.runs, seed_base=a.seed, method=a.method,
                      threshold=a.threshold, slices=a.slices, max_iters=a.max_iters)
    if os.path.exists(a.problem):
        raise ValidationError("batch campaigns take a registry id for --problem")
    registry(a.problem)
    ckpt = os.path.join(a.out, "checkpoint.json") if a.out else None
    summaries, finals = [], []
    if ckpt and a.resume and os.path.exists(ckpt):
        with open(ckpt) as fh:
            doc = load_envelope(fh.read())
        if doc["config"] != _plain(asdict(cfg)):
            raise ValidationError("checkpoint was written for a different configuration")
        summaries = doc["payload"]["records"]
        finals = doc["payload"].get("failed_controls", [])
    start = len(summaries)
    idx = list(range(start, cfg.runs))
    workers = min(_workers(), max(1, len(idx)))
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    mapper = pool.map if pool else map
    try:
        for i, rec in zip(idx, mapper(single_run, [cfg] * len(idx), idx)):
            summaries.append(_plain(record_summary(rec)))
            if not rec.success:
                finals.append({"seed": rec.seed, "control": control_doc(rec.final)})
            if ckpt and (i + 1) % 10 == 0 and i + 1 < cfg.runs:
                payload = {"records": summaries, "failed_controls": _plain(finals)}
                atomic_write(ckpt, dumps(envelope("batch", _plain(asdict(cfg)), payload)))
    finally:
        if pool:
            pool.shutdown()
    payload = _batch_payload(summaries, cfg.threshold)
    payload["failed_controls"] = _plain(finals)
    ctx.emit("histogram.csv", csv_text(("bin_lo", "bin_hi", "count"),
                                       histogram_rows(np.array(payload["histogram"]["edges"]),
                                                      payload["histogram"]["counts"])))
    ctx.emit("histories.csv", csv_text(("run", "iteration", "error"),
                                       history_rows([s["history"] for s in summaries])))
    ctx.emit("cumulative.csv", csv_text(("stage", "terminal_error", "count"),
                                        cumulative_rows({"final": payload["terminal_errors"]})))
    if ckpt and os.path.exists(ckpt):
        os.unlink(ckpt)
    ctx.say(f"runs={payload['runs']} successes={payload['successes']} "
            f"fraction={payload['success_fraction']:.3f} threshold={cfg.threshold!r}")
    return payload, EXIT_OK


def _center(ctx, prob):
    a = ctx.args
    if a.control:
        return load_control(a.control, prob.target_time)
    if prob.critical_control is None:
        raise ValidationError("problem has no stored critical control; pass --control")
    return prob.critical_control


def cmd_trapscan(ctx):
    a = ctx.args
    prob = load_problem(a.problem, a.slices)
    center = _center(ctx, prob)
    rng = np.random.default_rng(a.seed)
    s = perturb_sample(prob.system, prob.objective, center, a.samples, a.scale, rng)
    ctx.emit("scatter.csv", csv_text(("delta_norm", "fidelity_gap"), scatter_rows(s)))
    out = {"center_fidelity": s.center_fidelity, "samples": s.n, "scale": s.scale,
           "fraction_below": s.fraction_below, "max_sampled_fidelity": s.max_fidelity}
    if a.runs:
        r = restart_probe(prob.system, prob.objective, center, a.delta, a.runs, _options(a), rng)
        ctx.emit("restarts.csv", csv_text(("run", "iteration", "fidelity_difference"),
                                          history_rows(r.histories)))
        out.update(restart_runs=r.runs, escapes=r.escapes, restart_terminal_errors=r.terminal_errors)
    ctx.say(" ".join(f"{k}={v!r}" for k, v in out.items() if not isinstance(v, np.ndarray)))
    return out, EXIT_OK


def cmd_refine(ctx):
    a = ctx.args
    prob = load_problem(a.problem, a.slices)
    center = _center(ctx, prob)
    r = refine_mesh(prob.system, prob.objective, center, a.factor, _options(a))
    ctx.emit("cumulative.csv", csv_text(("stage", "terminal_error", "count"),
                                        cumulative_rows({"before": [r.error_before],
                                                         "refined": [r.error_after]})))
    ctx.say(f"factor={r.factor} error_before={r.error_before!r} error_after={r.error_after!r} "
            f"improvement={r.improvement!r}")
    return {"factor": r.factor, "error_before": r.error_before, "error_resampled": r.error_resampled,
            "error_after": r.error_after, "improvement": r.improvement}, EXIT_OK


def cmd_ceiling(ctx):
    vals = sun_trap_ceiling(ctx.args.N)
    ctx.say(" ".join(repr(v) for v in vals) if vals else "(none)")
    return {"N": ctx.args.N, "values": vals}, EXIT_OK


COMMANDS = {
    "verify-examples": cmd_verify_examples,
    "kinematic": cmd_kinematic,
    "controllability": cmd_controllability,
    "theorem2": cmd_theorem2,
    "dae": cmd_dae,
    "kernels": cmd_kernels,
    "optimize": cmd_optimize,
    "batch": cmd_batch,
    "trapscan": cmd_trapscan,
    "refine": cmd_refine,
    "ceiling": cmd_ceiling,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--problem", help="problem JSON file or registry id "
                        f"({', '.join(sorted(REGISTRY))})")
    common.add_argument("--out", help="directory for result artifacts")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--runs", type=int, default=0)
    common.add_argument("--threshold", type=float, default=1e-4)
    common.add_argument("--slices", type=int, default=None)
    common.add_argument("--max-iters", type=int, default=1000)
    fmt = common.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="print the result envelope")
    fmt.add_argument("--csv", action="store_true", help="also write CSV plot data (needs --out)")

    p = _Parser(prog="landscape-lab", description="Control-landscape experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("verify-examples", parents=[common], help="closed-form example regression")
    s.add_argument("--all", action="store_true")
    s.add_argument("--id", choices=["eigenstate3", "saddle4", "trap4", "unitary_trap3", "vartime4"])

    s = sub.add_parser("kinematic", parents=[common], help="group-level critical point classification")
    s.add_argument("--unitary")
    s.add_argument("--control")

    s = sub.add_parser("controllability", parents=[common], help="Lie algebra rank test")
    s.add_argument("--exact-time", action="store_true")

    s = sub.add_parser("theorem2", parents=[common], help="constant-control critical point construction")
    s.add_argument("--fidelity", type=float, required=True)
    s.add_argument("--time", type=float)

    s = sub.add_parser("dae", parents=[common], help="non-constant critical control")
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--step", type=float, default=1e-3)

    s = sub.add_parser("kernels", parents=[common], help="kernel operator spectra")
    s.add_argument("--operator", default="S",
                   choices=["C", "S", "saddle4", "trap4", "unitary_trap3", "vartime4"])
    s.add_argument("--T", type=float, default=math.pi)
    s.add_argument("--omega", type=float, default=None)
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--rule", choices=["midpoint", "cell"], default="midpoint")
    s.add_argument("--top", type=int, default=16)

    s = sub.add_parser("optimize", parents=[common], help="single optimization run")
    s.add_argument("--method", choices=["bfgs", "sequential"], default="bfgs")
    s.add_argument("--control")
    s.add_argument("--sweeps", type=int, default=200)

    s = sub.add_parser("batch", parents=[common], help="multi-start campaign")
    s.add_argument("--method", choices=["bfgs", "sequential"], default="bfgs")
    s.add_argument("--resume", action="store_true")

    s = sub.add_parser("trapscan", parents=[common], help="neighbourhood sampling and restarts")
    s.add_argument("--control")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--scale", type=float, default=0.01)
    s.add_argument("--delta", type=float, default=0.1)

    s = sub.add_parser("refine", parents=[common], help="mesh refinement restart")
    s.add_argument("--control")
    s.add_argument("--factor", type=int, default=3)

    s = sub.add_parser("ceiling", parents=[common], help="SU(N) trap fidelities")
    s.add_argument("--N", type=int, required=True)
    return p


def run_command(argv, stdout=None, stderr=None):
    """Parse ``argv``, run the subcommand and return the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=stderr)
        return EXIT_USAGE
    if args.command == "batch" and args.runs < 1:
        print("batch: --runs must be at least 1", file=stderr)
        return EXIT_USAGE
    if getattr(args, "csv", False) and not args.out:
        print(f"{args.command}: --csv needs --out", file=stderr)
        return EXIT_USAGE
    ctx = Context(args)
    t0 = time.perf_counter()
    try:
        payload, status = COMMANDS[args.command](ctx)
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "json", "csv", "resume")}
        env = envelope(args.command, _plain(config), _plain(payload), [args.seed])
        text = dumps(env)
        ctx.emit("result.json", text)
        ctx.emit("timing.json", dumps({"wall_time": time.perf_counter() - t0}))
    except ValidationError as exc:
        print(f"{args.command}: validation error: {exc}", file=stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"{args.command}: numeric failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    if args.json:
        stdout.write(text)
    else:
        for line in ctx.lines:
            print(line, file=stdout)
    return status


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
