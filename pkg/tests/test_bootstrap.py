from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterlogit.bootstrap import (BootstrapSummary, CVSettings, QuantitySummary, align_labels, bca_interval,
                                    bias_correction, bootstrap_run, inclusion_screen, jackknife_acceleration,
                                    percentile_interval, resample_rows, significance_table, write_significance)
from clusterlogit.errors import DataValidationError, HierarchyError
from clusterlogit.synthetic import default_spec, synthesize

SMALL_CV = CVSettings(grid_size=8, folds=3, repeats=1)


def quiet_bca(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return bca_interval(*args, **kw)


# --- BCa ------------------------------------------------------------------------

def test_symmetric_case_reduces_to_percentile():
    r = np.linspace(-3, 3, 401)
    ci = bca_interval(r, 0.0, jackknife_values=np.array([-1.0, 0.0, 1.0]))
    assert ci.params.z0 == 0.0 and ci.params.a == 0.0
    assert (ci.lower, ci.upper) == percentile_interval(r)


@given(st.integers(0, 10_000), st.floats(0.01, 0.3))
def test_zero_corrections_give_percentile_exactly(seed, alpha):
    r = np.random.default_rng(seed).gamma(2.0, size=300)
    ci = bca_interval(r, float(np.median(r)) + 0.3, alpha, z0=0.0, a=0.0)
    assert (ci.lower, ci.upper) == percentile_interval(r, alpha)


def test_degenerate_replicates():
    ci = bca_interval(np.full(200, 1.5), 1.5)
    assert (ci.lower, ci.upper) == (1.5, 1.5) and ci.degenerate


def test_few_replicates_warn():
    with pytest.warns(RuntimeWarning, match="only 10 replicates"):
        bca_interval(np.arange(10.0), 4.5)


def test_interval_is_ordered_and_inside_range(rng):
    r = rng.lognormal(size=500)
    ci = quiet_bca(r, 1.2, jackknife_values=rng.lognormal(size=20))
    assert r.min() <= ci.lower <= ci.upper <= r.max()


def test_bias_correction_uses_mid_ranks():
    assert bias_correction([1.0, 2.0, 3.0, 4.0], 2.5) == 0.0
    assert bias_correction([1.0, 2.0, 2.0, 3.0], 2.0) == 0.0
    assert math.isfinite(bias_correction([1.0, 2.0, 3.0], 10.0))


def test_acceleration_formula():
    v = np.array([1.0, 2.0, 4.0])
    d = v.mean() - v
    assert jackknife_acceleration(v) == pytest.approx((d ** 3).sum() / (6 * ((d ** 2).sum()) ** 1.5))
    assert jackknife_acceleration([2.0, 2.0]) == 0.0


def test_coverage_small_simulation():
    # Reduced-size version of the acceptance check: normal mean, n=30.
    rng = np.random.default_rng(123)
    hits = 0
    sims = 200
    for _ in range(sims):
        x = rng.normal(size=30)
        boot = rng.choice(x, size=(1000, 30)).mean(axis=1)
        jack = (x.sum() - x) / 29
        ci = bca_interval(boot, x.mean(), jackknife_values=jack)
        hits += ci.lower <= 0.0 <= ci.upper
    assert 0.89 <= hits / sims <= 0.99


def test_bca_input_errors():
    with pytest.raises(DataValidationError):
        bca_interval([], 0.0)
    with pytest.raises(DataValidationError):
        bca_interval([1.0, np.nan], 0.0)
    with pytest.raises(DataValidationError):
        bca_interval([1.0, 2.0], 0.0, alpha_level=1.5)


# --- resampling -----------------------------------------------------------------

def test_resample_redraws_until_usable():
    y = np.array([1] + [0] * 9)
    labels = np.array([1] * 9 + [2])
    rows, redraws = resample_rows(y, labels, 2, seed=0, b=0)
    assert set(y[rows]) == {0, 1} and set(labels[rows]) == {1, 2}
    again, r2 = resample_rows(y, labels, 2, seed=0, b=0)
    assert np.array_equal(rows, again) and redraws == r2


def test_align_labels_matches_permutation(rng):
    ref = rng.integers(1, 4, size=50)
    perm = np.array([3, 1, 2])
    assert np.array_equal(align_labels(ref, perm[ref - 1], 3), ref)


# --- full run ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_data():
    ds = synthesize(default_spec(n=300), seed=3)
    return ds, ds.cluster_labels


@pytest.fixture(scope="module")
def small_run(small_data):
    ds, labels = small_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return bootstrap_run(ds, labels, B=4, seed=7, cv=SMALL_CV, jackknife=3)


def test_run_is_deterministic(small_data, small_run):
    ds, labels = small_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        again = bootstrap_run(ds, labels, B=4, seed=7, cv=SMALL_CV, jackknife=3)
    assert again.to_dict() == small_run.to_dict()


def test_larger_B_extends_replicate_stream(small_data, small_run):
    ds, labels = small_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        two = bootstrap_run(ds, labels, B=2, seed=7, cv=SMALL_CV, jackknife=0)
    assert two.lambdas == small_run.lambdas[:2]
    for name, vals in two.replicate_values.items():
        assert vals == small_run.replicate_values[name][:2]


def test_summary_invariants(small_run):
    s = small_run
    assert s.n_used + s.n_excluded == s.B
    for q in s.quantities.values():
        if not q.degenerate:
            assert q.lower <= q.upper
    assert all(0 <= v <= 1 for v in s.zero_proportion.values())
    assert "late=yes|ROR|C2" in s.quantities and "interaction:late" in s.zero_proportion


def test_replicates_csv(small_run, tmp_path):
    small_run.write_replicates(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "replicate,quantity,value"
    assert len(lines) == 1 + small_run.B * len(small_run.quantities)


def test_recluster_flag_runs(small_data):
    ds, labels = small_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = bootstrap_run(ds, labels, B=2, seed=1, cv=SMALL_CV, jackknife=0, recluster_per_replicate=True,
                          recluster_restarts=1)
    assert s.n_used + s.n_excluded == 2


# --- screening --------------------------------------------------------------------

def _summary(zero_props: dict[str, float], quantities=None) -> BootstrapSummary:
    return BootstrapSummary(10, 0, 0.05, 10, 0, 0, quantities or {}, zero_props, [], [])


def test_inclusion_screen_rules():
    res = inclusion_screen(_summary({"main:x": 0.0, "cluster": 0.05, "interaction:x": 0.0, "main:z": 0.5}))
    assert res.retained == ["cluster", "interaction:x", "main:x"]
    assert res.dropped == ["main:z"]


def test_inclusion_screen_hierarchy_violation():
    with pytest.raises(HierarchyError):
        inclusion_screen(_summary({"main:x": 0.5, "cluster": 0.0, "interaction:x": 0.0}))


@pytest.mark.parametrize("lo,hi,degenerate,sig", [
    (1.29, 1.89, False, True),
    (0.95, 1.45, False, False),
    (0.40, 0.80, False, True),
    (1.00, 1.00, True, False),
])
def test_significance(lo, hi, degenerate, sig, tmp_path):
    q = QuantitySummary("late=yes|OR|C1", 1.5, 1.5, 0.1, lo, hi, 0.0, 0.0, degenerate)
    rows = significance_table(_summary({}, {q.name: q}))
    assert rows[0]["significant"] is sig and rows[0]["variable"] == "late" and rows[0]["quantity"] == "OR|C1"
    write_significance(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().startswith("variable,level,quantity")
