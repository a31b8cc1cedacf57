from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from interference_lab.errors import InvalidArgumentError, UndefinedMetricError
from interference_lab.models import LogisticRegression, MultinomialLogisticRegression, RandomForest, auc, log_loss
from oracles import brute_force_auc


# logistic ------------------------------------------------------------------------


def _logit_data(n, w, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, len(w) - 1))
    y = (rng.random(n) < expit(w[0] + X @ np.asarray(w[1:]))).astype(int)
    return X, y


def test_constant_feature_half_labels():
    X = np.ones((100, 1))
    y = np.array([0, 1] * 50)
    model = LogisticRegression().fit(X, y)
    assert model.coef_[0] == pytest.approx(0.0, abs=1e-6)
    assert np.allclose(model.predict_proba(X), 0.5, atol=1e-6)


def test_recovers_known_weights():
    X, y = _logit_data(100_000, [0.0, 1.0, -2.0], seed=1)
    w = LogisticRegression().fit(X, y).coef_
    assert np.allclose(w[1:], [1.0, -2.0], atol=0.05)


def test_beats_constant_rate_log_loss():
    X, y = _logit_data(5000, [0.3, 0.8, 0.0, -0.5], seed=2)
    p = LogisticRegression().fit(X, y).predict_proba(X)
    assert log_loss(y, p) <= log_loss(y, np.full(len(y), y.mean()))


def test_gradient_matches_finite_differences_and_vanishes():
    X, y = _logit_data(400, [0.2, 0.5, -0.3, 0.8, 0.1], seed=3)
    model = LogisticRegression(reg=0.1)
    Z = np.column_stack([np.ones(len(X)), X])
    w = np.random.default_rng(4).standard_normal(5)
    analytic = model.gradient(w, Z, y)
    h = 1e-6
    numeric = np.array(
        [(model.objective(w + h * e, Z, y) - model.objective(w - h * e, Z, y)) / (2 * h) for e in np.eye(5)]
    )
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-6)
    model.fit(X, y)
    assert np.linalg.norm(model.gradient(model.coef_, Z, y)) <= 1e-6


def test_separable_data_warns_without_ridge():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    with pytest.warns(RuntimeWarning, match="diverging"):
        LogisticRegression(reg=0.0).fit(X, y)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LogisticRegression(reg=1e-1).fit(X, y)


def test_single_label_rejected():
    with pytest.raises(InvalidArgumentError):
        LogisticRegression().fit(np.zeros((4, 1)), np.zeros(4))


def test_multinomial_probabilities_sum_to_one():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((3000, 3))
    labels = np.argmax(X @ rng.standard_normal((3, 4)) + rng.gumbel(size=(3000, 4)), axis=1)
    model = MultinomialLogisticRegression().fit(X, labels, n_classes=4)
    P = model.predict_proba(X)
    assert P.shape == (3000, 4)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(MultinomialLogisticRegression.from_dict(model.to_dict()).predict_proba(X), P)


def test_logistic_serialization_round_trip():
    X, y = _logit_data(500, [0.1, 1.0], seed=6)
    m = LogisticRegression().fit(X, y)
    back = LogisticRegression.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))


# forest --------------------------------------------------------------------------


def _xor(n, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n, 2)).astype(float)
    y = (X[:, 0] != X[:, 1]).astype(int)
    flip = rng.random(n) < 0.05
    return X, np.where(flip, 1 - y, y)


def test_forest_learns_xor():
    X, y = _xor(10_000)
    f = RandomForest(n_trees=20, max_depth=3, max_features=2, seed=1).fit(X, y)
    assert auc(f.predict_proba(X)[:, 1], y) > 0.95


def test_depth_zero_forest_predicts_base_rate():
    X, y = _xor(2000, seed=2)
    f = RandomForest(n_trees=10, max_depth=0, seed=1).fit(X, y)
    p = f.predict_proba(X)[:, 1]
    assert np.ptp(p) == 0
    # bootstrap resampling moves each tree's base rate only slightly
    assert p[0] == pytest.approx(y.mean(), abs=0.02)


def test_forest_same_seed_same_predictions():
    X, y = _xor(3000, seed=3)
    a = RandomForest(n_trees=10, max_depth=4, seed=9).fit(X, y).predict_proba(X)
    b = RandomForest(n_trees=10, max_depth=4, seed=9).fit(X, y).predict_proba(X)
    assert np.array_equal(a, b)


def test_forest_invariant_to_row_order():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((2000, 5))
    y = (X[:, 0] + X[:, 1] * X[:, 2] + rng.standard_normal(2000) > 0).astype(int)
    perm = rng.permutation(2000)
    a = RandomForest(n_trees=15, max_depth=5, seed=2).fit(X, y)
    b = RandomForest(n_trees=15, max_depth=5, seed=2).fit(X[perm], y[perm])
    assert np.allclose(a.predict_proba(X), b.predict_proba(X), atol=1e-12)


def test_forest_independent_of_jobs():
    X, y = _xor(3000, seed=5)
    a = RandomForest(n_trees=8, max_depth=3, seed=1, n_jobs=1).fit(X, y).predict_proba(X)
    b = RandomForest(n_trees=8, max_depth=3, seed=1, n_jobs=2).fit(X, y).predict_proba(X)
    assert np.array_equal(a, b)


def test_forest_serialization_round_trip():
    X, y = _xor(1000, seed=6)
    f = RandomForest(n_trees=5, max_depth=3, seed=1).fit(X, y)
    back = RandomForest.from_dict(json.loads(json.dumps(f.to_dict())))
    assert np.array_equal(back.predict_proba(X), f.predict_proba(X))


def test_forest_multiclass_rows_sum_to_one():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((1500, 3))
    y = np.digitize(X[:, 0], [-0.5, 0.5])
    P = RandomForest(n_trees=10, max_depth=4, seed=0).fit(X, y).predict_proba(X)
    assert P.shape == (1500, 3)
    assert np.allclose(P.sum(axis=1), 1.0)


def test_forest_argument_checks():
    with pytest.raises(InvalidArgumentError):
        RandomForest(n_trees=0)
    with pytest.raises(InvalidArgumentError):
        RandomForest(max_depth=-1)


# auc -----------------------------------------------------------------------------


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 4, [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=30))
def test_auc_matches_pair_enumeration(pairs):
    scores = [s / 6 for s, _ in pairs]
    labels = [l for _, l in pairs]
    if len(set(labels)) < 2:
        return
    assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-3, 3, allow_nan=False), min_size=4, max_size=40),
    st.sampled_from([np.exp, np.tanh, lambda v: 3 * v + 1, lambda v: v**3]),
)
def test_auc_invariant_to_monotone_transforms(scores, f):
    scores = np.array(scores)
    labels = (np.arange(len(scores)) % 2).astype(int)
    # strictly monotone maps preserve order; tanh can saturate ties, so compare on distinct values
    tr = f(scores)
    if len(np.unique(tr)) != len(np.unique(scores)):
        return
    assert auc(tr, labels) == pytest.approx(auc(scores, labels), abs=1e-12)
