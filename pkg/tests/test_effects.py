from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interference_lab.effects import (
    EffectEstimate,
    MeanTable,
    average_overall_effect,
    enumerate_contrasts,
    overall_effect,
    spillover_effect,
    unit_effect,
)
from interference_lab.errors import InvalidArgumentError
from interference_lab.rules import enumerate_valid_rules

# Published counterfactual means (rows: ads 1-3; columns: rules 111, 110, 100, 000)
PUBLISHED = {
    "111": (0.57, 0.28, 0.20),
    "110": (0.64, 0.32, 0.07),
    "100": (0.83, 0.11, 0.09),
    "000": (0.56, 0.28, 0.21),
}


def published_means() -> MeanTable:
    return MeanTable({(rule, i + 1): v for rule, vals in PUBLISHED.items() for i, v in enumerate(vals)})


def test_published_unit_effect():
    ue = unit_effect(published_means(), 2, 1, 0, (1, 0, 0))
    assert ue.value == pytest.approx(0.21, abs=1e-12)


def test_published_spillover_effect():
    se = spillover_effect(published_means(), 2, 1, (1, 1, 1), (1, 1, 0))
    assert se.value == pytest.approx(-0.04, abs=1e-12)


def test_published_overall_effect_is_sum():
    t = published_means()
    oe = overall_effect(t, 2, (1, 1, 1), (1, 0, 0))
    ue = unit_effect(t, 2, 1, 0, (1, 0, 0))
    se = spillover_effect(t, 2, 1, (1, 1, 1), (1, 1, 0))
    assert oe.value == pytest.approx(0.17, abs=1e-12)
    assert abs(oe.value - (ue.value + se.value)) <= 1e-12


def test_degenerate_contrasts_are_zero():
    t = published_means()
    assert unit_effect(t, 2, 1, 1, (1, 1, 0)).value == 0
    assert spillover_effect(t, 1, 1, (1, 0, 0), (1, 0, 0)).value == 0
    assert overall_effect(t, 3, (1, 1, 0), (1, 1, 0)).value == 0
    assert average_overall_effect(t, "111", "111").value == 0


def test_average_overall_effect():
    t = published_means()
    aoe = average_overall_effect(t, (1, 1, 1), (0, 0, 0))
    assert aoe.value == pytest.approx(np.mean([0.57 - 0.56, 0.28 - 0.28, 0.20 - 0.21]), abs=1e-12)


def test_invalid_composition_names_rule():
    with pytest.raises(InvalidArgumentError, match="monotonicity"):
        unit_effect(published_means(), 2, 1, 0, (1, 1, 1))  # (1,0,1) is not a valid rule


def test_missing_cell_rejected():
    t = MeanTable({("111", 1): 0.5})
    with pytest.raises(InvalidArgumentError):
        overall_effect(t, 1, "111", "000")


def test_quadrature_stderr_without_replicates():
    t = MeanTable({("111", 1): 0.5, ("000", 1): 0.4}, se={("111", 1): 0.03, ("000", 1): 0.04})
    oe = overall_effect(t, 1, "111", "000")
    assert oe.stderr == pytest.approx(0.05)
    assert oe.ci[0] < oe.value < oe.ci[1]


def test_bootstrap_covariance_enters_contrasts():
    rng = np.random.default_rng(0)
    shared = rng.standard_normal(500)
    # perfectly correlated replicates: the contrast has no spread
    reps = np.column_stack([0.5 + 0.01 * shared, 0.4 + 0.01 * shared])
    t = MeanTable({("111", 1): 0.5, ("000", 1): 0.4}, replicates=reps, cells=[("111", 1), ("000", 1)])
    oe = overall_effect(t, 1, "111", "000")
    assert oe.stderr == pytest.approx(0.0, abs=1e-12)


def test_effect_estimate_rejects_negative_stderr():
    with pytest.raises(InvalidArgumentError):
        EffectEstimate(0.1, -1.0)


def test_enumerated_contrasts_cover_all_kinds():
    cs = enumerate_contrasts(published_means())
    kinds = {c.kind for c in cs}
    assert kinds == {"UE", "SE", "OE", "AOE"}
    n_rules = len(enumerate_valid_rules(3))
    assert sum(c.kind == "OE" for c in cs) == 3 * n_rules * (n_rules - 1) // 2
    assert sum(c.kind == "AOE" for c in cs) == n_rules * (n_rules - 1) // 2
    row = cs[0].as_row()
    assert {"kind", "position", "value", "ci_low", "ci_high"} <= set(row)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=12, max_size=12), st.integers(1, 3))
def test_telescoping_identity(values, i):
    rules = enumerate_valid_rules(3)
    t = MeanTable({(r.label(), pos): values[k * 3 + pos - 1] for k, r in enumerate(rules) for pos in (1, 2, 3)})
    for a in rules:
        for b in rules:
            if a.bits[i - 1] != 1 or b.bits[i - 1] != 1:
                continue
            # route a -> b through an intermediate rule that moves ad i to Bottom in b's context
            try:
                mid_ue = unit_effect(t, i, 1, 0, b)
            except InvalidArgumentError:
                continue
            se = spillover_effect(t, i, 1, a, b)
            oe = overall_effect(t, i, a, b.with_position(i, 0))
            assert abs(oe.value - (se.value + mid_ue.value)) <= 1e-12
