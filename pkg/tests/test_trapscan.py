import numpy as np
import pytest

from landscape_lab import registry
from landscape_lab.optimize import OptimizerOptions
from landscape_lab.qcore import ValidationError
from landscape_lab.trapscan import (
    cumulative_rows,
    dossier,
    histogram_rows,
    history_rows,
    perturb_sample,
    refine_mesh,
    restart_probe,
    scatter_rows,
)


@pytest.fixture(scope="module")
def trap():
    p = registry("trap4", S=40)
    return p.system, p.objective, p.critical_control


def test_perturb_sample_below_trap(trap):
    sys, obj, f = trap
    s = perturb_sample(sys, obj, f, n=200, scale=0.01, rng=np.random.default_rng(0))
    assert s.fraction_below == 1.0 and s.max_fidelity < s.center_fidelity
    assert len(scatter_rows(s)) == 200 and np.all(s.delta_norms > 0)


def test_restart_probe_large_kick_escapes(trap):
    sys, obj, f = trap
    r = restart_probe(sys, obj, f, delta_scale=10.0, runs=5, rng=np.random.default_rng(1),
                      opts=OptimizerOptions(max_iters=300))
    assert r.escapes >= 3 and r.escape_fraction == r.escapes / 5
    assert len(history_rows(r.histories)) == sum(len(h) for h in r.histories)


def test_refine_keeps_trap(trap):
    sys, obj, f = trap
    r = refine_mesh(sys, obj, f, factor=2)
    assert r.error_resampled == pytest.approx(r.error_before, abs=1e-12)
    assert r.improvement < 0.5


def test_dossier_summary(trap):
    sys, obj, f = trap
    d = dossier(sys, obj, f, n=100, runs=5, delta_scale=0.05, factor=2,
                opts=OptimizerOptions(max_iters=100))
    s = d.summary()
    assert s["fraction_below"] == 1.0 and s["restart_runs"] == 5
    assert s["center_fidelity"] == pytest.approx(0.25)


def test_table_helpers():
    rows = cumulative_rows({"a": [3.0, 1.0], "b": [2.0]})
    assert rows == [("a", 1.0, 1), ("a", 3.0, 2), ("b", 2.0, 1)]
    assert histogram_rows(np.array([0.0, 1.0, 2.0]), [4, 5]) == [(0.0, 1.0, 4), (1.0, 2.0, 5)]


def test_validation(trap):
    sys, obj, f = trap
    with pytest.raises(ValidationError):
        perturb_sample(sys, obj, f, n=10)
    with pytest.raises(ValidationError):
        perturb_sample(sys, obj, f, n=100, scale=0)
    with pytest.raises(ValidationError):
        restart_probe(sys, obj, f, runs=2)
    with pytest.raises(ValidationError):
        refine_mesh(sys, obj, f, factor=1)
