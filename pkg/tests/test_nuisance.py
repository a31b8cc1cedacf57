from __future__ import annotations

import json

import numpy as np
import pytest

from interference_lab.errors import InvalidArgumentError
from interference_lab.models import auc
from interference_lab.models.metrics import multiclass_log_loss
from interference_lab.models.nuisance import (
    VARIANTS,
    FeatureSetSpec,
    FittedModel,
    OutcomeModel,
    PropensityModel,
    fit_forest,
    fit_logistic,
    fit_outcome,
    fit_propensity,
    outcome_columns,
    outcome_features,
)
from interference_lab.presets import golden, self_only
from interference_lab.rules import enumerate_valid_rules
from interference_lab.sem import Dataset, SemConfig, propensity_probs, simulate


def test_feature_set_validation():
    with pytest.raises(InvalidArgumentError):
        FeatureSetSpec("nonsense")
    with pytest.raises(InvalidArgumentError):
        FeatureSetSpec("discovered")
    spec = FeatureSetSpec("discovered", ["d2_x1_1"])
    assert FeatureSetSpec.from_dict(spec.to_dict()) == spec


def test_variant_columns_nest(small_golden):
    names = {v: outcome_columns(small_golden, 2, FeatureSetSpec(v))[0] for v in VARIANTS if v != "discovered"}
    assert set(names["baseline"]) < set(names["block"]) < set(names["block-cross"])
    assert {"ctx_own_block", "ctx_n_top"} <= set(names["baseline"])
    assert {f"a{j}" for j in (1, 2, 3)} <= set(names["full"])
    assert not any(n.startswith("x1_") for n in names["baseline"])


def test_block_columns_follow_allocation(small_golden):
    d = small_golden.subset(np.arange(200))
    names, M = outcome_columns(d, 1, FeatureSetSpec("block-cross"), rule=(1, 0, 0))
    frame = dict(zip(names, M.T))
    assert not frame["xb2_1"].any() and not frame["xb3_1"].any()
    assert np.array_equal(frame["xc2_1"], d.x[:, 1, 0])
    names, M = outcome_columns(d, 1, FeatureSetSpec("block-cross"), rule=(1, 1, 1))
    frame = dict(zip(names, M.T))
    assert not frame["xc2_1"].any()


def test_outcome_features_frame_matches_matrix(small_golden):
    spec = FeatureSetSpec("discovered", ("d1_x3_3", "d2_x1_1"))
    names, M = outcome_columns(small_golden, 2, spec)
    frame = outcome_features(small_golden, 2, spec)
    assert list(frame.columns) == names
    assert np.array_equal(frame.to_numpy(), M)


def test_unknown_discovered_column_rejected(small_golden):
    with pytest.raises(InvalidArgumentError):
        outcome_columns(small_golden, 1, FeatureSetSpec("discovered", ("d9_x1_1",)))


def test_schema_mismatch_rejected(small_golden):
    model = fit_outcome(small_golden, 1, "baseline")
    with pytest.raises(InvalidArgumentError):
        model.fitted.predict_proba(outcome_features(small_golden, 1, FeatureSetSpec("block")))


def test_predictions_inside_unit_interval(small_golden):
    for kind in ("logistic", "forest"):
        model = fit_outcome(small_golden, 3, "full", kind=kind, n_trees=10, max_depth=4)
        p = model.predict(small_golden)
        assert ((p > 0) & (p < 1)).all()


def test_outcome_model_serialization(small_golden):
    for kind in ("logistic", "forest"):
        model = fit_outcome(small_golden, 2, "block", kind=kind, n_trees=5, max_depth=3)
        back = OutcomeModel.from_dict(json.loads(json.dumps(model.to_dict())))
        assert np.array_equal(back.predict(small_golden), model.predict(small_golden))


def test_fit_helpers_need_two_labels():
    with pytest.raises(InvalidArgumentError):
        fit_logistic(np.zeros((5, 2)), np.ones(5))
    with pytest.raises(InvalidArgumentError):
        fit_forest(np.zeros((5, 2)), np.ones(5))


def test_uniform_rules_give_uniform_propensity():
    cfg = SemConfig(m=3, p=2, seed=4)  # zero propensity weights: every rule has mass 1/4
    d = simulate(cfg, 20_000)
    probs = fit_propensity(d).predict(d)
    assert np.allclose(probs.mean(axis=0), 0.25, atol=0.01)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_joint_propensity_log_loss_close_to_truth():
    cfg = golden(8)
    d = simulate(cfg, 30_000)
    truth = multiclass_log_loss(d.rule_idx, propensity_probs(cfg, d.x))
    fitted = multiclass_log_loss(d.rule_idx, fit_propensity(d).predict(d))
    assert fitted <= truth * 1.02


def test_product_mode_normalizes(small_golden):
    model = fit_propensity(small_golden, mode="product")
    probs = model.predict(small_golden)
    assert probs.shape == (small_golden.n, 4)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    raw = model.unnormalized_product(small_golden)
    assert (raw.sum(axis=1) <= 1.0 + 1e-12).all()


def test_forest_propensity(small_golden):
    probs = fit_propensity(small_golden, kind="forest", n_trees=10, max_depth=3).predict(small_golden)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_missing_rule_needs_smoothing(small_golden):
    keep = np.flatnonzero(small_golden.rule_idx != 2)
    d = small_golden.subset(keep)
    with pytest.raises(InvalidArgumentError, match="100"):
        fit_propensity(d)
    smoothed = fit_propensity(d, smoothing=0.01).predict(d)
    assert np.allclose(smoothed[:, 2], 0.01)
    assert np.allclose(smoothed.sum(axis=1), 1.0)
    zero = fit_propensity(d, smoothing=0).predict(d)
    assert not zero[:, 2].any()


def test_one_rule_dataset_is_certain(small_golden):
    d = small_golden.subset(np.flatnonzero(small_golden.rule_idx == 1))
    probs = fit_propensity(d, smoothing=0).predict(d)
    assert np.array_equal(probs[:, 1], np.ones(d.n))


def test_propensity_serialization(small_golden):
    for mode in ("joint", "product"):
        model = fit_propensity(small_golden, mode=mode)
        back = PropensityModel.from_dict(json.loads(json.dumps(model.to_dict())))
        assert np.array_equal(back.predict(small_golden), model.predict(small_golden))


def test_interference_improves_auc():
    d = simulate(golden(21), 30_000)
    tr, te = d.subset(np.arange(20_000)), d.subset(np.arange(20_000, 30_000))
    base = auc(fit_outcome(tr, 2, "baseline").predict(te), te.y[:, 1])
    full = auc(fit_outcome(tr, 2, "full").predict(te), te.y[:, 1])
    assert full > base


def test_no_interference_variants_tie():
    d = simulate(self_only(22), 40_000)
    tr, te = d.subset(np.arange(30_000)), d.subset(np.arange(30_000, 40_000))
    base = auc(fit_outcome(tr, 1, "baseline").predict(te), te.y[:, 0])
    cross = auc(fit_outcome(tr, 1, "block-cross").predict(te), te.y[:, 0])
    assert abs(cross - base) < 0.01


def test_true_parents_are_sufficient():
    from interference_lab.discovery import true_parents

    cfg = golden(23)
    d = simulate(cfg, 30_000)
    tr, te = d.subset(np.arange(20_000)), d.subset(np.arange(20_000, 30_000))
    spec = FeatureSetSpec("discovered", tuple(true_parents(cfg, 1)))
    disc = auc(fit_outcome(tr, 1, spec).predict(te), te.y[:, 0])
    full = auc(fit_outcome(tr, 1, "full").predict(te), te.y[:, 0])
    assert disc >= full - 0.01


def test_rule_order_in_propensity_matches_enumeration(small_golden):
    probs = fit_propensity(small_golden).predict(small_golden)
    obs = np.bincount(small_golden.rule_idx, minlength=4) / small_golden.n
    assert np.allclose(probs.mean(axis=0), obs, atol=1e-3)
    assert len(enumerate_valid_rules(3)) == probs.shape[1]
