"""Counterfactual-mean estimators (g-formula, IPW, AIPW) with cross-fitting and a pageview bootstrap.

For a rule a and position i, with outcome regression mu_a(X) = E[Y_i | A=a, X]
and propensity pi_a(X) = p(A=a | X), the per-pageview contributions are

    gformula: mu_a(X)
    ipw:      1(A=a) Y_i / pi_a(X)
    aipw:     1(A=a) (Y_i - mu_a(X)) / pi_a(X) + mu_a(X)

and each estimate is their sample mean. Propensities are floored at CLIP
before entering a denominator (no upper clip: a rule that is certain given X
must get weight exactly 1).
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
from scipy.stats import norm

from interference_lab.effects import EffectEstimate, MeanTable
from interference_lab.errors import InvalidArgumentError, NumericalError
from interference_lab.models.forest import _mix
from interference_lab.models.nuisance import (
    FeatureSetSpec,
    TrueOutcomeModel,
    TruePropensityModel,
    fit_outcome,
    fit_propensity,
)
from interference_lab.rules import as_rule, enumerate_valid_rules

ESTIMATORS = ("aipw", "gformula", "ipw")
CLIP = 1e-3


# nuisance providers -------------------------------------------------------------


def _learned_outcome(train, position, spec, kind, reg, n_trees, max_depth, seed, n_jobs):
    return fit_outcome(
        train, position, spec, kind=kind, reg=reg, n_trees=n_trees, max_depth=max_depth, seed=seed, n_jobs=n_jobs
    )


def _learned_propensity(train, mode, kind, smoothing, reg, n_trees, max_depth, seed, n_jobs):
    return fit_propensity(
        train,
        mode=mode,
        kind=kind,
        smoothing=smoothing,
        reg=reg,
        n_trees=n_trees,
        max_depth=max_depth,
        seed=seed,
        n_jobs=n_jobs,
    )


def _fixed(model, *_args):
    return model


def _oracle_outcome(cfg, _train, position):
    return TrueOutcomeModel(cfg, position)


@dataclass(frozen=True)
class Nuisances:
    """How to obtain the two nuisance models from a training set.

    ``outcome(train, position)`` and ``propensity(train)`` return fitted models;
    they are called once per cross-fitting fold (and per bootstrap resample).
    """

    outcome: Callable
    propensity: Callable
    description: dict = field(default_factory=dict, compare=False)

    @classmethod
    def learned(
        cls,
        kind: str = "logistic",
        variant: str | FeatureSetSpec = "block-cross",
        mode: str = "joint",
        propensity_kind: str | None = None,
        smoothing: float | None = None,
        reg: float = 1e-6,
        n_trees: int = 200,
        max_depth: int = 6,
        seed: int = 0,
        n_jobs: int = 1,
    ) -> "Nuisances":
        spec = FeatureSetSpec(variant) if isinstance(variant, str) else variant
        pkind = propensity_kind or kind
        common = {"reg": reg, "n_trees": n_trees, "max_depth": max_depth, "seed": seed, "n_jobs": n_jobs}
        return cls(
            functools.partial(_learned_outcome, spec=spec, kind=kind, **common),
            functools.partial(_learned_propensity, mode=mode, kind=pkind, smoothing=smoothing, **common),
            # n_jobs is left out of the description: it never changes the result
            {
                "outcome": f"{kind}:{spec.variant}",
                "propensity": f"{pkind}:{mode}",
                "smoothing": smoothing,
                **{k: v for k, v in common.items() if k != "n_jobs"},
            },
        )

    @classmethod
    def oracle(cls, cfg) -> "Nuisances":
        return cls(
            functools.partial(_oracle_outcome, cfg),
            functools.partial(_fixed, TruePropensityModel(cfg)),
            {"outcome": "oracle", "propensity": "oracle"},
        )

    def with_outcome(self, outcome, name: str = "custom") -> "Nuisances":
        fn = outcome if callable(outcome) and not hasattr(outcome, "predict") else functools.partial(_fixed, outcome)
        return Nuisances(fn, self.propensity, {**self.description, "outcome": name})

    def with_propensity(self, propensity, name: str = "custom") -> "Nuisances":
        fn = (
            propensity
            if callable(propensity) and not hasattr(propensity, "predict")
            else functools.partial(_fixed, propensity)
        )
        return Nuisances(self.outcome, fn, {**self.description, "propensity": name})


# cross-fitted predictions -------------------------------------------------------


def fold_ids(ids, k_folds: int, seed: int = 0) -> np.ndarray:
    """Fold of each pageview from a hash of its id, so folds do not depend on row order."""
    if k_folds < 1:
        raise InvalidArgumentError("k_folds must be >= 1")
    h = _mix(np.asarray(ids, dtype=np.int64).astype(np.uint64) ^ _mix(np.array([seed], dtype=np.uint64)))
    return (h % np.uint64(k_folds)).astype(np.int64)


@dataclass
class Predictions:
    """Out-of-fold nuisance predictions: ``mu`` (R, N, P) under each rule, ``pi`` (N, m+1)."""

    rules: list
    positions: list[int]
    mu: np.ndarray
    pi: np.ndarray
    folds: np.ndarray


def nuisance_predictions(d, nuis: Nuisances, rules=None, positions=None, k_folds: int = 1, seed: int = 0):
    rules = enumerate_valid_rules(d.m) if rules is None else [as_rule(r) for r in rules]
    positions = list(range(1, d.m + 1)) if positions is None else [int(i) for i in positions]
    for r in rules:
        if r.m != d.m:
            raise InvalidArgumentError(f"rule {r} has length {r.m}, data has m={d.m}")
    for i in positions:
        if not 1 <= i <= d.m:
            raise InvalidArgumentError(f"position must be in 1..{d.m}")
    n = d.n
    mu = np.zeros((len(rules), n, len(positions)))
    pi = np.zeros((n, d.m + 1))
    folds = fold_ids(d.ids, k_folds, seed) if k_folds > 1 else np.zeros(n, dtype=np.int64)
    for f in range(k_folds):
        test = np.flatnonzero(folds == f)
        if len(test) == 0:
            continue
        train = d if k_folds == 1 else d.subset(np.flatnonzero(folds != f))
        held = d if k_folds == 1 else d.subset(test)
        pi[test] = nuis.propensity(train).predict(held)
        for c, i in enumerate(positions):
            model = nuis.outcome(train, i)
            if not getattr(model, "uses_allocation", True):
                raise InvalidArgumentError(
                    f"outcome model for position {i} has no allocation-dependent inputs; "
                    "it cannot answer interventional queries"
                )
            for r, rule in enumerate(rules):
                mu[r, test, c] = model.predict(held, rule)
    return Predictions(rules, positions, mu, pi, folds)


def contributions(d, pred: Predictions, estimator: str, clip: float = CLIP) -> np.ndarray:
    """Per-pageview terms (R, P, N) whose means are the estimates."""
    if estimator not in ESTIMATORS:
        raise InvalidArgumentError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    all_rules = [r.label() for r in enumerate_valid_rules(d.m)]
    ridx = d.rule_idx
    cols = [p - 1 for p in pred.positions]
    y = d.y[:, cols].astype(float).T  # (P, N)
    out = np.zeros((len(pred.rules), len(cols), d.n))
    for r, rule in enumerate(pred.rules):
        k = all_rules.index(rule.label())
        mu = pred.mu[r].T  # (P, N)
        if estimator == "gformula":
            out[r] = mu
            continue
        match = (ridx == k).astype(float)
        w = match / np.maximum(pred.pi[:, k], clip)
        out[r] = w * y if estimator == "ipw" else w * (y - mu) + mu
    return out


def _frame(pred: Predictions, phi: np.ndarray, d, level: float) -> pd.DataFrame:
    n = phi.shape[-1]
    psi = phi.mean(axis=-1) if n else np.zeros(phi.shape[:2])
    se = phi.std(axis=-1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(phi.shape[:2])
    z = norm.ppf(0.5 + level / 2.0)
    all_rules = [r.label() for r in enumerate_valid_rules(d.m)]
    counts = np.bincount(d.rule_idx, minlength=d.m + 1) if n else np.zeros(d.m + 1, int)
    rows = []
    for r, rule in enumerate(pred.rules):
        for c, i in enumerate(pred.positions):
            rows.append(
                {
                    "rule": rule.label(),
                    "position": i,
                    "psi": psi[r, c],
                    "se": se[r, c],
                    "ci_low": psi[r, c] - z * se[r, c],
                    "ci_high": psi[r, c] + z * se[r, c],
                    "n_match": int(counts[all_rules.index(rule.label())]),
                }
            )
    return pd.DataFrame(rows)


def estimate_means(
    d,
    nuis: Nuisances,
    estimators=ESTIMATORS,
    rules=None,
    positions=None,
    k_folds: int = 1,
    seed: int = 0,
    level: float = 0.95,
    clip: float = CLIP,
) -> dict[str, pd.DataFrame]:
    """Every requested estimator over every (rule, position) cell, sharing one set of nuisance fits."""
    if d.n == 0:
        raise InvalidArgumentError("cannot estimate from an empty dataset")
    pred = nuisance_predictions(d, nuis, rules, positions, k_folds, seed)
    return {e: _frame(pred, contributions(d, pred, e, clip), d, level) for e in estimators}


# single-cell operations ---------------------------------------------------------


def _single(d, phi: np.ndarray, estimator: str, target: str, level: float, diagnostics=None) -> EffectEstimate:
    n = len(phi)
    value = float(phi.mean())
    se = float(phi.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    z = norm.ppf(0.5 + level / 2.0)
    return EffectEstimate(value, se, (value - z * se, value + z * se), estimator, target, n, level, diagnostics or {})


def _check(d, a, position):
    rule = as_rule(a)
    if rule.m != d.m:
        raise InvalidArgumentError(f"rule {rule} has length {rule.m}, data has m={d.m}")
    if not 1 <= position <= d.m:
        raise InvalidArgumentError(f"position must be in 1..{d.m}")
    if d.n == 0:
        raise InvalidArgumentError("cannot estimate from an empty dataset")
    return rule


def _match(d, rule) -> np.ndarray:
    return np.all(d.a == np.asarray(rule.bits, dtype=np.int8)[None, :], axis=1)


def _propensity_of(d, propensity_model, rule, clip) -> np.ndarray:
    k = [r.label() for r in enumerate_valid_rules(d.m)].index(rule.label())
    return np.maximum(np.asarray(propensity_model.predict(d))[:, k], clip)


def gformula_mean(d, outcome_model, a, position: int, level: float = 0.95) -> EffectEstimate:
    """Average of the outcome regression at A=a over the empirical covariate law.

    The stderr treats the fitted model as fixed."""
    rule = _check(d, a, position)
    if not getattr(outcome_model, "uses_allocation", True):
        raise InvalidArgumentError("outcome model has no allocation-dependent inputs")
    mu = np.asarray(outcome_model.predict(d, rule), dtype=float)
    return _single(d, mu, "gformula", f"E[Y{position}({rule.label()})]", level)


def ipw_mean(d, propensity_model, a, position: int, level: float = 0.95, clip: float = CLIP) -> EffectEstimate:
    rule = _check(d, a, position)
    match = _match(d, rule)
    if not match.any():
        warnings.warn(f"no pageview has allocation {rule.label()}; IPW estimate is 0", RuntimeWarning, stacklevel=2)
    pi = _propensity_of(d, propensity_model, rule, clip)
    phi = match * d.y[:, position - 1] / pi
    return _single(
        d, phi, "ipw", f"E[Y{position}({rule.label()})]", level, {"n_match": int(match.sum()), "min_pi": float(pi.min())}
    )


def aipw_mean(
    d,
    outcome_model,
    propensity_model,
    a,
    position: int,
    k_folds: int = 1,
    seed: int = 0,
    level: float = 0.95,
    clip: float = CLIP,
) -> EffectEstimate:
    """Doubly robust mean of Y_position(a).

    With ``k_folds == 1`` the two models are fitted objects used as they are.
    With ``k_folds > 1`` they must be factories, ``outcome_model(train, position)``
    and ``propensity_model(train)``, refit on each fold's complement.
    """
    rule = _check(d, a, position)
    if k_folds < 1:
        raise InvalidArgumentError("k_folds must be >= 1")
    if k_folds == 1:
        nuis = Nuisances(functools.partial(_fixed, outcome_model), functools.partial(_fixed, propensity_model))
    else:
        if hasattr(outcome_model, "predict") or hasattr(propensity_model, "predict"):
            raise InvalidArgumentError("cross-fitting needs model factories, not fitted models")
        nuis = Nuisances(outcome_model, propensity_model)
    pred = nuisance_predictions(d, nuis, [rule], [position], k_folds, seed)
    phi = contributions(d, pred, "aipw", clip)[0, 0]
    n_match = int(_match(d, rule).sum())
    diag = {"n_match": n_match, "k_folds": k_folds, "extrapolated": n_match == 0}
    if n_match == 0:
        warnings.warn(
            f"no pageview has allocation {rule.label()}; AIPW reduces to the g-formula term",
            RuntimeWarning,
            stacklevel=2,
        )
    return _single(d, phi, "aipw", f"E[Y{position}({rule.label()})]", level, diag)


# bootstrap ---------------------------------------------------------------------


_RECOVERABLE = (InvalidArgumentError, NumericalError, np.linalg.LinAlgError, FloatingPointError, ValueError)


@dataclass
class BootstrapResult:
    point: np.ndarray
    replicates: np.ndarray  # (B kept, T)
    level: float
    n_dropped: int
    B: int
    errors: list[str] = field(default_factory=list)

    @property
    def stderr(self) -> np.ndarray:
        return self.replicates.std(axis=0, ddof=1)

    @property
    def cov(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.replicates, rowvar=False))

    @property
    def ci(self) -> np.ndarray:
        """(T, 2) percentile intervals, widened when needed so they contain the point estimate."""
        tail = (1.0 - self.level) / 2.0
        lo, hi = np.quantile(self.replicates, [tail, 1.0 - tail], axis=0)
        return np.column_stack([np.minimum(lo, self.point), np.maximum(hi, self.point)])


def _resample(d, b: int, seed: int, estimator):
    rng = np.random.default_rng([seed, b])
    idx = rng.integers(0, d.n, d.n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return np.atleast_1d(np.asarray(estimator(d.subset(idx)), dtype=float)), None
    except _RECOVERABLE as exc:
        return None, f"resample {b}: {type(exc).__name__}: {exc}"


def bootstrap(
    d,
    estimator: Callable,
    B: int = 200,
    level: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
    max_drop: float = 0.10,
) -> BootstrapResult:
    """Nonparametric bootstrap over whole pageviews.

    ``estimator(dataset)`` returns a scalar or a vector of targets and must refit
    whatever it needs. Resample b draws its indices from the stream (seed, b) over
    the pageviews sorted by id, so results depend neither on row order nor on
    ``n_jobs``. Failing resamples are dropped and counted; more than ``max_drop``
    of them is an error.
    """
    if B < 50:
        raise InvalidArgumentError("the bootstrap needs B >= 50 resamples")
    if not 0 < level < 1:
        raise InvalidArgumentError("level must be in (0, 1)")
    if d.n == 0:
        raise InvalidArgumentError("cannot bootstrap an empty dataset")
    d = d.subset(np.argsort(d.ids, kind="stable"))
    point = np.atleast_1d(np.asarray(estimator(d), dtype=float))
    if n_jobs == 1:
        results = [_resample(d, b, seed, estimator) for b in range(B)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_resample)(d, b, seed, estimator) for b in range(B))
    reps = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    if len(errors) > max_drop * B:
        raise NumericalError(f"{len(errors)} of {B} bootstrap resamples failed; first: {errors[0]}")
    if errors:
        warnings.warn(f"dropped {len(errors)} of {B} bootstrap resamples", RuntimeWarning, stacklevel=2)
    return BootstrapResult(point, np.vstack(reps), level, len(errors), B, errors)


# full table --------------------------------------------------------------------


@dataclass
class EstimateReport:
    tables: dict[str, MeanTable]
    frames: dict[str, pd.DataFrame]
    observed: pd.DataFrame
    n_dropped: int = 0
    B: int = 0


def estimate_table(
    d,
    nuis: Nuisances,
    estimators=ESTIMATORS,
    k_folds: int = 2,
    B: int = 200,
    level: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
    clip: float = CLIP,
) -> EstimateReport:
    """All rules x positions for each estimator, with bootstrap intervals when ``B > 0``."""
    rules = enumerate_valid_rules(d.m)
    positions = list(range(1, d.m + 1))
    cells = [(r.label(), i) for r in rules for i in positions]
    estimators = tuple(estimators)

    def run(data):
        frames = estimate_means(data, nuis, estimators, rules, positions, k_folds, seed, level, clip)
        return np.concatenate([frames[e]["psi"].to_numpy() for e in estimators])

    frames = estimate_means(d, nuis, estimators, rules, positions, k_folds, seed, level, clip)
    tables: dict[str, MeanTable] = {}
    n_dropped = 0
    if B:
        boot = bootstrap(d, run, B, level, seed, n_jobs)
        n_dropped = boot.n_dropped
        T = len(cells)
        ci = boot.ci
        for e_idx, e in enumerate(estimators):
            sl = slice(e_idx * T, (e_idx + 1) * T)
            f = frames[e]
            f["se"] = boot.stderr[sl]
            f["ci_low"], f["ci_high"] = ci[sl, 0], ci[sl, 1]
            tables[e] = MeanTable(
                dict(zip(cells, f["psi"])),
                dict(zip(cells, f["se"])),
                replicates=boot.replicates[:, sl],
                cells=cells,
                level=level,
                estimator=e,
                n_used=d.n,
            )
    else:
        for e in estimators:
            f = frames[e]
            tables[e] = MeanTable(
                dict(zip(cells, f["psi"])), dict(zip(cells, f["se"])), level=level, estimator=e, n_used=d.n
            )
    observed = pd.DataFrame({"position": positions, "observed": d.y.mean(axis=0)})
    return EstimateReport(tables, frames, observed, n_dropped, B)
