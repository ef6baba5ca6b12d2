from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterlogit.dataset import VariableSchema
from clusterlogit.effects import (UNIT, EffectEstimate, conditional_log_or, direct_log_or, effect_table, interpret,
                                  ror_from_ors, write_effects)
from clusterlogit.errors import DataValidationError
from clusterlogit.glasso import ModelParams

from oracles import CASES, case_error, complete, complete2, draw, params_for


def engine(params, var, level, cluster):
    return conditional_log_or(params, None, var, level, cluster, original_units=False)


def direct(params, var, level, cluster):
    return direct_log_or(params, var, level, cluster, original_units=False)


@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_engine_matches_closed_forms(case):
    rng = np.random.default_rng(17)
    for _ in range(50):
        b, t = draw(case, rng)
        assert case_error(case, b, t, engine) < 1e-12


@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_direct_route_matches_closed_forms(case):
    rng = np.random.default_rng(18)
    for _ in range(50):
        b, t = draw(case, rng)
        assert case_error(case, b, t, direct) < 1e-12


def test_worked_example_values():
    case = CASES[2]  # binary, k=2
    params = params_for(case, np.array([0.3]), np.array([[0.1]]))
    assert engine(params, "x", "v1", 2) == pytest.approx(2 * (0.3 + 0.1), abs=1e-15)
    table = effect_table(params)
    assert table[0].ror_vs_reference[2] == pytest.approx(math.exp(0.4), rel=1e-14)


def test_null_model_gives_unit_or():
    case = CASES[7]
    params = params_for(case, np.zeros(2), np.zeros((2, 2)))
    for e in effect_table(params):
        assert all(v == 1.0 for v in e.or_by_cluster.values())
        assert all(v == 1.0 for v in e.ror_vs_reference.values())


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(2, 5))
def test_zero_interaction_collapse(seed, L, k):
    rng = np.random.default_rng(seed)
    var = VariableSchema("x", "categorical", tuple(f"v{a}" for a in range(L)))
    params = ModelParams((var,), k, 0.0, [complete(rng.normal(size=L - 1))], np.zeros(k),
                         [np.zeros((L, k))], [True], True, [False], np.zeros(1), np.ones(1))
    for e in effect_table(params):
        vals = list(e.or_by_cluster.values())
        assert max(vals) - min(vals) < 1e-14
        assert all(abs(v - 1) < 1e-14 for v in e.ror_vs_reference.values())
        assert e.formula_tag.endswith("no interaction")


@given(st.integers(0, 10_000))
def test_exchange_symmetry_three_levels_k3(seed):
    rng = np.random.default_rng(seed)
    case = CASES[7]
    b, t = draw(case, rng)
    p = params_for(case, b, t)
    swapped_levels = params_for(case, b[::-1], t[::-1])
    swapped_clusters = params_for(case, b, t[:, ::-1])

    def ror(params, level, cluster):
        return engine(params, "x", level, cluster) - engine(params, "x", level, 1)

    assert ror(p, "v1", 2) == pytest.approx(ror(swapped_levels, "v2", 2), abs=1e-12)
    assert ror(p, "v1", 2) == pytest.approx(ror(swapped_clusters, "v1", 3), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(2, 5))
def test_generic_engine_equals_direct_route(seed, L, k):
    rng = np.random.default_rng(seed)
    var = VariableSchema("x", "categorical", tuple(f"v{a}" for a in range(L)))
    params = ModelParams((var,), k, 0.0, [complete(rng.normal(size=L - 1))], np.zeros(k),
                         [complete2(rng.normal(size=(L - 1, k - 1)), row_ref=True)], [True], True, [True],
                         np.zeros(1), np.ones(1))
    for lv in var.levels[1:]:
        for s in range(1, k + 1):
            assert engine(params, "x", lv, s) == pytest.approx(direct(params, "x", lv, s), abs=1e-12)


def test_continuous_original_units():
    var = VariableSchema("age", "continuous")
    params = ModelParams((var,), 2, 0.0, [np.array([0.8])], np.zeros(2), [np.array([[-0.2, 0.2]])],
                         [True], True, [True], np.array([30.0]), np.array([4.0]))
    assert conditional_log_or(params, None, "age", None, 2) == pytest.approx(1.0 / 4.0)
    assert conditional_log_or(params, None, "age", None, 2, original_units=False) == pytest.approx(1.0)
    e = effect_table(params)[0]
    assert e.level == UNIT
    assert e.ror_vs_reference[2] == pytest.approx(math.exp(0.4 / 4.0))


def test_na_blocks_propagate():
    case = CASES[2]
    params = params_for(case, np.array([0.3]), np.array([[0.1]]))
    params.na["theta:x"] = "separated"
    assert math.isnan(engine(params, "x", "v1", 1))
    e = effect_table(params)[0]
    assert e.na_flags == {"all": "separated"} and math.isnan(e.ror_vs_reference[2])


def test_ror_from_ors():
    assert ror_from_ors(0.7473, 0.8350) == pytest.approx(1.1174, abs=1e-4)
    assert ror_from_ors(1.3, 1.3) == 1.0
    assert ror_from_ors(1.6021, 1e-9) == pytest.approx(0.0, abs=1e-8)
    with pytest.raises(DataValidationError):
        ror_from_ors(float("nan"), 1.0)


@pytest.mark.parametrize("ror,text", [
    (2.0, "approximately 100% stronger"),
    (1.11, "approximately 11% stronger"),
    (0.75, "approximately 25% weaker"),
    (1.0, "no differential effect"),
])
def test_interpret(ror, text):
    e = EffectEstimate("late", "yes", {1: 1.0, 2: ror}, {2: ror}, "binary, k=2")
    assert text in interpret(e)


def test_interpret_rejects_na():
    e = EffectEstimate("late", "yes", {1: 1.0, 2: float("nan")}, {2: float("nan")}, "binary, k=2")
    with pytest.raises(DataValidationError):
        interpret(e)


def test_write_effects(tmp_path):
    case = CASES[3]
    params = params_for(case, np.array([0.3, -0.1]), np.array([[0.1], [0.2]]))
    effects = effect_table(params)
    write_effects(effects, 2, tmp_path / "e.csv", tmp_path / "e.json")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "variable,level,formula_tag,OR_C1,OR_C2,ROR_C2,na"
    assert len(lines) == 3
    assert len(json.loads((tmp_path / "e.json").read_text())) == 2
