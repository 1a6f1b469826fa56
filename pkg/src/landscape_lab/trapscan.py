"""Forensics for suspected traps: neighbourhood sampling, perturbed restarts
and mesh refinement.

Every routine returns plain data; the command-line layer writes the CSV
tables (``scatter_rows``, ``history_rows`` and ``cumulative_rows``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .optimize import OptimizerOptions, bfgs_run
from .propagate import PiecewiseControl, propagate
from .qcore import ValidationError


@dataclass(frozen=True, eq=False)
class PerturbationSample:
    center_fidelity: float
    n: int
    scale: float
    fraction_below: float
    max_fidelity: float
    delta_norms: np.ndarray = field(repr=False)
    fidelity_gaps: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class RestartStats:
    center_fidelity: float
    delta_scale: float
    runs: int
    escapes: int
    terminal_errors: np.ndarray
    histories: tuple = field(repr=False, default=())

    @property
    def escape_fraction(self):
        return self.escapes / self.runs


@dataclass(frozen=True, eq=False)
class RefinementStats:
    factor: int
    error_before: float
    error_resampled: float
    error_after: float
    improvement: float
    record: object = field(repr=False, default=None)


@dataclass(frozen=True, eq=False)
class TrapDossier:
    center: PiecewiseControl
    center_fidelity: float
    sample: PerturbationSample | None = None
    restarts: RestartStats | None = None
    refinement: RefinementStats | None = None

    def summary(self):
        out = {"center_fidelity": self.center_fidelity}
        if self.sample is not None:
            out.update(sample_count=self.sample.n, fraction_below=self.sample.fraction_below,
                       max_sampled_fidelity=self.sample.max_fidelity)
        if self.restarts is not None:
            out.update(restart_escapes=self.restarts.escapes, restart_runs=self.restarts.runs)
        if self.refinement is not None:
            out.update(refinement_improvement=self.refinement.improvement)
        return out


def _fid(sys, obj, f):
    return obj.value(propagate(sys, f).endpoint)


def perturb_sample(sys, obj, center, n=10000, scale=0.01, rng=None):
    """Fidelity at ``n`` random perturbations ``center + scale * N(0, 1)``.

    Distances are ``||delta||_2 * sqrt(dt)``, a discrete L2 norm that is
    comparable across grids.
    """
    if n < 100:
        raise ValidationError(f"need at least 100 samples, got {n}")
    if not scale > 0:
        raise ValidationError("perturbation scale must be positive")
    rng = np.random.default_rng() if rng is None else rng
    f0 = _fid(sys, obj, center)
    a0 = center.amplitudes
    gaps = np.empty(n)
    norms = np.empty(n)
    for i in range(n):
        d = scale * rng.standard_normal(a0.shape)
        gaps[i] = _fid(sys, obj, replace(center, amplitudes=a0 + d)) - f0
        norms[i] = np.linalg.norm(d) * math.sqrt(center.dt)
    return PerturbationSample(f0, n, scale, float(np.mean(gaps < 0)), float(f0 + gaps.max()),
                              norms, gaps)


def restart_probe(sys, obj, center, delta_scale=0.1, runs=10, opts=None, rng=None):
    """Restart BFGS from ``runs`` perturbations of ``center``.

    A run escapes when its terminal error drops below a tenth of the error at
    the centre.  The recorded histories are ``F(n) - F(center)``.
    """
    if runs < 5:
        raise ValidationError(f"need at least 5 restarts, got {runs}")
    rng = np.random.default_rng() if rng is None else rng
    opts = opts or OptimizerOptions()
    f0 = _fid(sys, obj, center)
    err0 = 1.0 - f0
    errs, hists, escapes = [], [], 0
    for _ in range(runs):
        start = replace(center, amplitudes=center.amplitudes
                        + delta_scale * rng.standard_normal(center.amplitudes.shape))
        rec = bfgs_run(sys, obj, start, opts)
        errs.append(rec.terminal_error)
        hists.append((1.0 - rec.history) - f0)
        if rec.terminal_error < 0.1 * err0:
            escapes += 1
    return RestartStats(f0, delta_scale, runs, escapes, np.array(errs), tuple(hists))


def refine_mesh(sys, obj, center, factor=3, opts=None):
    """Re-sample ``center`` onto ``S * factor`` slices and optimize again."""
    if int(factor) != factor or factor < 2:
        raise ValidationError(f"refinement factor must be an integer >= 2, got {factor}")
    opts = opts or OptimizerOptions()
    fine = center.resample(int(factor))
    e_before = 1.0 - _fid(sys, obj, center)
    e_res = 1.0 - _fid(sys, obj, fine)
    rec = bfgs_run(sys, obj, fine, opts)
    e_after = rec.terminal_error
    imp = (e_before - e_after) / e_before if e_before > 0 else 0.0
    return RefinementStats(int(factor), e_before, e_res, e_after, float(max(imp, 0.0)), rec)


def dossier(sys, obj, center, n=2000, scale=0.01, delta_scale=0.1, runs=10, factor=3,
            opts=None, seed=0):
    """Full forensic pass with deterministic seeding."""
    rng = np.random.default_rng(seed)
    sample = perturb_sample(sys, obj, center, n, scale, rng)
    rs = restart_probe(sys, obj, center, delta_scale, runs, opts, rng)
    ref = refine_mesh(sys, obj, center, factor, opts)
    return TrapDossier(center, sample.center_fidelity, sample, rs, ref)


# -- plot tables ------------------------------------------------------------------

SCATTER_COLUMNS = ("delta_norm", "fidelity_gap")
HISTORY_COLUMNS = ("run", "iteration", "value")
CUMULATIVE_COLUMNS = ("stage", "terminal_error", "count")
HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "count")


def scatter_rows(sample):
    return [(float(a), float(b)) for a, b in zip(sample.delta_norms, sample.fidelity_gaps)]


def history_rows(histories):
    """``(run, iteration, value)`` rows for a list of per-run histories."""
    return [(r, i, float(v)) for r, h in enumerate(histories) for i, v in enumerate(h)]


def cumulative_rows(stages):
    """Rows for cumulative counts; ``stages`` maps a stage name to terminal errors."""
    rows = []
    for name, errs in stages.items():
        for k, e in enumerate(np.sort(np.asarray(errs, dtype=float)), start=1):
            rows.append((name, float(e), k))
    return rows


def histogram_rows(edges, counts):
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
