from __future__ import annotations

import math

import numpy as np
import pytest

from clusterlogit.errors import DataValidationError
from clusterlogit.glm import fit_unpenalized, subset_fits
from clusterlogit.synthetic import (CategoricalGenerator, SyntheticSpec, default_spec, synthesize, two_blob_data,
                                    write_synthetic)


def test_same_seed_same_csv(tmp_path):
    spec = default_spec(n=300)
    a = write_synthetic(spec, 4, tmp_path / "a")
    b = write_synthetic(spec, 4, tmp_path / "b")
    for key in ("data", "schema", "truth"):
        assert a[key].read_bytes() == b[key].read_bytes()
    assert SyntheticSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_default_truth():
    spec = default_spec()
    assert spec.interaction_names() == ["score", "late"]
    assert spec.true_log_ror("late", "yes", 2) == pytest.approx(1.6)
    assert spec.true_log_ror("score", None, 2) == pytest.approx(1.0)
    assert spec.true_log_or("sex", "M", 1) == pytest.approx(0.3)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.update(weights=[1.0, 0.0]), "empty cluster"),
    (lambda d: d.update(gamma=[0.1, 0.1]), "gamma"),
    (lambda d: d["beta"].update(late=[0.5, 0.5]), "sum to zero"),
    (lambda d: d["beta"].update(late=[0.0, 0.0]), "without both main effects"),
])
def test_spec_validation(mutate, msg):
    d = default_spec().to_dict()
    mutate(d)
    with pytest.raises(DataValidationError, match=msg):
        SyntheticSpec.from_dict(d)


def test_no_interaction_gives_equal_cluster_ors():
    d = default_spec(n=5000).to_dict()
    d["theta"] = {}
    spec = SyntheticSpec.from_dict(d)
    ds = synthesize(spec, seed=2)
    fits = subset_fits(ds, ds.cluster_labels)
    for var, lv in (("late", "yes"), ("sex", "M"), ("score", None)):
        (b1, _), (b2, _) = (fits[s].conditional_log_or(var, lv, 1) for s in (1, 2))
        se = math.hypot(*(fits[s].se[fits[s].names.index(f"{var}[{lv}]" if lv else var)] for s in (1, 2)))
        assert abs(b1 - b2) < 4 * se


def test_binary_main_effect_is_recovered():
    spec = SyntheticSpec(
        n=20000, k=2, weights=[0.5, 0.5],
        categorical=[CategoricalGenerator("x", ["a", "b"], [[0.5, 0.5]] * 2)],
        beta={"x": [-0.3, 0.3]},
    )
    ds = synthesize(spec, seed=8)
    fit = fit_unpenalized(ds)
    or_hat = math.exp(fit.conditional_log_or("x", "b", 1)[0])
    assert abs(or_hat - math.exp(0.6)) < 0.05


def test_two_blob_data_shape():
    ds = two_blob_data(n=100, seed=1)
    assert ds.n == 100 and ds.q == 4 and set(np.unique(ds.cluster_labels)) == {1, 2}
