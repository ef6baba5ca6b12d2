from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clusterlogit.dataset import (Dataset, VariableSchema, destandardize, load_csv, load_schema,
                                  standardize_continuous, write_csv, write_schema)
from clusterlogit.errors import DataValidationError

SCHEMA = [
    VariableSchema("x2", "categorical", ("a", "b")),
    VariableSchema("x1", "continuous"),
    VariableSchema("y", "categorical", ("0", "1"), role="outcome"),
]


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_four_rows(tmp_path):
    p = _write(tmp_path, "x1,x2,y\n1.0,a,0\n2.5,b,1\n-3,a,1\n4,b,0\n")
    ds = load_csv(p, SCHEMA)
    assert (ds.n, ds.p, ds.q) == (4, 2, 1)
    assert [v.name for v in ds.features] == ["x1", "x2"]  # continuous first
    np.testing.assert_array_equal(ds.continuous[:, 0], [1.0, 2.5, -3.0, 4.0])
    np.testing.assert_array_equal(ds.categorical[:, 0], [0, 1, 0, 1])
    np.testing.assert_array_equal(ds.y, [0, 1, 1, 0])


def test_missing_cell_names_row(tmp_path):
    p = _write(tmp_path, "x1,x2,y\n1.0,a,0\n2.5,,1\n-3,a,1\n")
    with pytest.raises(DataValidationError, match=r"rows \[1\]"):
        load_csv(p, SCHEMA)


def test_single_class_outcome(tmp_path):
    p = _write(tmp_path, "x1,x2,y\n1.0,a,1\n2.5,b,1\n")
    with pytest.raises(DataValidationError, match="outcome has one class"):
        load_csv(p, SCHEMA)


@pytest.mark.parametrize("text,msg", [
    ("x1,x2,y,extra\n1,a,0,3\n2,b,1,4\n", "unknown column"),
    ("x1,y\n1,0\n2,1\n", "unknown column"),
    ("x1,x2,y\n1,c,0\n2,b,1\n", "unseen level"),
    ("x1,x2,y\n1,a,2\n2,b,1\n", "outcome value"),
])
def test_load_errors(tmp_path, text, msg):
    with pytest.raises(DataValidationError, match=msg):
        load_csv(_write(tmp_path, text), SCHEMA)


def test_schema_invariants():
    with pytest.raises(DataValidationError):
        VariableSchema("c", "categorical", ("a",))
    with pytest.raises(DataValidationError):
        VariableSchema("c", "categorical", ("a", "a"))
    with pytest.raises(DataValidationError):
        VariableSchema("c", "continuous", ("a", "b"))
    with pytest.raises(DataValidationError):
        VariableSchema("y", "categorical", ("a", "b", "c"), role="outcome")


def test_schema_roundtrip_json_and_toml(tmp_path):
    write_schema(SCHEMA, tmp_path / "s.json")
    assert load_schema(tmp_path / "s.json") == SCHEMA
    (tmp_path / "s.toml").write_text(
        '[[variables]]\nname = "x1"\nkind = "continuous"\n'
        '[[variables]]\nname = "y"\nkind = "categorical"\nlevels = ["0", "1"]\nrole = "outcome"\n')
    assert [v.name for v in load_schema(tmp_path / "s.toml")] == ["x1", "y"]


def test_standardize_simple():
    ds = Dataset((VariableSchema("x", "continuous"),), SCHEMA[2], [[1.0], [2.0], [3.0]], np.zeros((3, 0)), [0, 1, 0])
    out, rep = standardize_continuous(ds)
    np.testing.assert_allclose(out.continuous[:, 0], [-1.0, 0.0, 1.0])
    assert rep.centers[0] == 2.0 and rep.scales[0] == 1.0


def test_standardize_idempotent(rng):
    x = rng.normal(size=50)
    x = (x - x.mean()) / x.std(ddof=1)
    ds = Dataset((VariableSchema("x", "continuous"),), SCHEMA[2], x[:, None], np.zeros((50, 0)), np.arange(50) % 2)
    out, rep = standardize_continuous(ds)
    np.testing.assert_allclose(out.continuous[:, 0], x, atol=1e-12)
    assert abs(rep.centers[0]) < 1e-12 and abs(rep.scales[0] - 1) < 1e-12


def test_standardize_constant_column():
    ds = Dataset((VariableSchema("x", "continuous"),), SCHEMA[2], [[5.0], [5.0], [5.0]], np.zeros((3, 0)), [0, 1, 0])
    with pytest.raises(DataValidationError, match="zero variance"):
        standardize_continuous(ds)


@given(arrays(np.float64, st.tuples(st.integers(3, 30), st.integers(1, 3)),
              elements=st.floats(-1e4, 1e4, allow_nan=False)))
def test_destandardize_roundtrip(values):
    spread = values.max(axis=0) - values.min(axis=0)
    if np.any(spread < 1e-3):
        return
    n, q = values.shape
    feats = tuple(VariableSchema(f"x{j}", "continuous") for j in range(q))
    ds = Dataset(feats, SCHEMA[2], values, np.zeros((n, 0)), np.arange(n) % 2)
    std, rep = standardize_continuous(ds)
    back = destandardize(std, rep)
    np.testing.assert_allclose(back.continuous, values, rtol=0, atol=1e-10 * max(1.0, np.abs(values).max()))


def test_load_is_deterministic(tmp_path, rng):
    from conftest import make_dataset

    ds = make_dataset(rng, 30)
    write_csv(ds, tmp_path / "d.csv")
    write_schema(ds.schema, tmp_path / "s.json")
    a = load_csv(tmp_path / "d.csv", load_schema(tmp_path / "s.json"))
    b = load_csv(tmp_path / "d.csv", load_schema(tmp_path / "s.json"))
    assert a.to_canonical_json() == b.to_canonical_json() == ds.to_canonical_json()


def test_dataset_is_read_only(rng):
    from conftest import make_dataset

    ds = make_dataset(rng, 10)
    with pytest.raises(ValueError):
        ds.continuous[0, 0] = 1.0


def test_scoring_rows_without_outcome(tmp_path):
    p = _write(tmp_path, "x1,x2\n1.0,a\n2.5,b\n")
    ds = load_csv(p, SCHEMA, require_outcome=False)
    assert not ds.has_outcome and ds.n == 2
