"""Outcome-regression and propensity nuisance models, plus oracle stand-ins built from a SemConfig.

Outcome models expose ``predict(dataset, rule=None)``: the fitted E[Y_i | A, X]
evaluated at the observed allocation, or at ``rule`` for every pageview when
given. Propensity models expose ``predict(dataset)`` returning an (N, m+1)
matrix of rule probabilities ordered as ``enumerate_valid_rules``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from interference_lab.errors import InvalidArgumentError
from interference_lab.models.forest import RandomForest
from interference_lab.models.logistic import LogisticRegression, MultinomialLogisticRegression
from interference_lab.rules import AllocationRule, as_rule, enumerate_valid_rules, fci_preprocess

VARIANTS = ("baseline", "block", "block-cross", "full", "discovered")
KINDS = ("logistic", "forest")
PROB_EPS = 1e-12


@dataclass(frozen=True)
class FeatureSetSpec:
    """Conditioning set for an outcome model.

    baseline: page context and the ad's own features; block: plus same-block
    features of the other ads; block-cross: plus their cross-block features;
    full: context, every ad's features and every allocation bit; discovered: an
    explicit list of columns from the discovery table (``d1_*``, ``d2_*``, ``a*``).
    Page context is the ad's own block and the number of Top ads.
    """

    variant: str = "block-cross"
    discovered_parents: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown feature-set variant {self.variant!r}; choose from {VARIANTS}")
        if self.discovered_parents is not None:
            object.__setattr__(self, "discovered_parents", tuple(self.discovered_parents))
        if self.variant == "discovered" and not self.discovered_parents:
            raise InvalidArgumentError("the discovered variant needs a nonempty parent list")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "discovered_parents": list(self.discovered_parents or [])}

    @classmethod
    def from_dict(cls, doc) -> "FeatureSetSpec":
        return cls(doc["variant"], tuple(doc.get("discovered_parents") or ()) or None)


def _alloc(d, rule) -> np.ndarray:
    if rule is None:
        return d.a
    rule = as_rule(rule)
    if rule.m != d.m:
        raise InvalidArgumentError(f"rule {rule} has length {rule.m}, data has m={d.m}")
    return np.broadcast_to(np.asarray(rule.bits, dtype=np.int8), d.a.shape)


def outcome_columns(d, position: int, spec: FeatureSetSpec, rule=None) -> tuple[list[str], np.ndarray]:
    """Column names and (N, k) design matrix of an outcome model's inputs."""
    if not 1 <= position <= d.m:
        raise InvalidArgumentError(f"position must be in 1..{d.m}")
    a = _alloc(d, rule)
    i = position - 1
    n, m, p = d.x.shape
    if spec.variant == "discovered":
        table = fci_preprocess(d, position, x=d.x, a=a)
        unknown = [c for c in spec.discovered_parents if c not in table.columns or c.startswith("y")]
        if unknown:
            raise InvalidArgumentError(f"unknown parent columns {unknown}")
        names = list(spec.discovered_parents)
        return names, table[names].to_numpy(dtype=float)
    names = ["ctx_own_block", "ctx_n_top"]
    blocks = [a[:, [i]].astype(float), a.sum(axis=1, keepdims=True).astype(float)]
    if spec.variant == "full":
        names += [f"x{j + 1}_{k + 1}" for j in range(m) for k in range(p)]
        names += [f"a{j + 1}" for j in range(m)]
        return names, np.hstack(blocks + [d.x.reshape(n, m * p), a.astype(float)])
    names += [f"x{position}_{k + 1}" for k in range(p)]
    blocks.append(d.x[:, i, :])
    others = [j for j in range(m) if j != i]
    same = (a == a[:, [i]])[:, others, None]
    xo = d.x[:, others, :]
    if spec.variant in ("block", "block-cross"):
        names += [f"xb{j + 1}_{k + 1}" for j in others for k in range(p)]
        blocks.append(np.where(same, xo, 0.0).reshape(n, -1))
    if spec.variant == "block-cross":
        names += [f"xc{j + 1}_{k + 1}" for j in others for k in range(p)]
        blocks.append(np.where(same, 0.0, xo).reshape(n, -1))
    return names, np.hstack(blocks)


def outcome_features(d, position: int, spec: FeatureSetSpec, rule=None) -> pd.DataFrame:
    """Design matrix for the outcome model of ``position`` under the observed or a fixed allocation."""
    names, M = outcome_columns(d, position, spec, rule)
    return pd.DataFrame(M, columns=names)


def propensity_features(d) -> np.ndarray:
    return d.x.reshape(d.n, -1)


# fitted models ---------------------------------------------------------------


@dataclass
class FittedModel:
    kind: str
    estimator: object
    schema: list[str]
    diagnostics: dict = field(default_factory=dict)
    n_classes: int = 2
    multiclass: bool = False

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, pd.DataFrame):
            if list(X.columns) != list(self.schema):
                raise InvalidArgumentError(
                    f"prediction columns {list(X.columns)} do not match training schema {self.schema}"
                )
            return X.to_numpy(dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise InvalidArgumentError(f"expected {len(self.schema)} feature columns")
        return X

    def predict_proba(self, X) -> np.ndarray:
        """P(label = 1) for binary models, an (n, K) matrix for multiclass ones; always inside (0, 1)."""
        Z = self._matrix(X)
        probs = self.estimator.predict_proba(Z)
        if not self.multiclass and probs.ndim == 2:
            probs = probs[:, 1]
        if self.multiclass and self.n_classes == 1:
            return probs  # a single observed class is certain
        return np.clip(probs, PROB_EPS, 1 - PROB_EPS)

    def to_dict(self) -> dict:
        kind = self.kind
        if isinstance(self.estimator, MultinomialLogisticRegression):
            kind = "multinomial"
        return {
            "kind": kind,
            "schema": list(self.schema),
            "n_classes": self.n_classes,
            "multiclass": self.multiclass,
            "diagnostics": _jsonable(self.diagnostics),
            "params": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc) -> "FittedModel":
        loaders = {
            "logistic": LogisticRegression,
            "multinomial": MultinomialLogisticRegression,
            "forest": RandomForest,
            "constant": _Constant,
        }
        est = loaders[doc["kind"]].from_dict(doc["params"])
        kind = "logistic" if doc["kind"] == "multinomial" else doc["kind"]
        return cls(
            kind, est, list(doc["schema"]), doc.get("diagnostics", {}), doc["n_classes"], doc.get("multiclass", False)
        )


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=float))


def _xy(table, labels, schema=None):
    if isinstance(table, pd.DataFrame):
        schema = [str(c) for c in table.columns]
        X = table.to_numpy(dtype=float)
    else:
        X = np.asarray(table, dtype=float)
        schema = list(schema) if schema is not None else [f"f{k}" for k in range(X.shape[1])]
    y = np.asarray(labels)
    if len(y) != len(X):
        raise InvalidArgumentError("features and labels have different lengths")
    return X, y, schema


def fit_logistic(table, labels, reg: float = 1e-6, init=None, schema=None) -> FittedModel:
    X, y, schema = _xy(table, labels, schema)
    if len(np.unique(y)) < 2:
        raise InvalidArgumentError("logistic fit needs at least two distinct labels")
    est = LogisticRegression(reg=reg).fit(X, y, init=init)
    return FittedModel("logistic", est, schema, dict(est.diagnostics))


def fit_forest(
    table, labels, n_trees: int = 200, max_depth: int = 6, seed: int = 0, n_jobs: int = 1, schema=None, **kw
) -> FittedModel:
    X, y, schema = _xy(table, labels, schema)
    y = y.astype(int)
    if len(np.unique(y)) < 2:
        raise InvalidArgumentError("forest fit needs at least two distinct labels")
    n_classes = max(2, int(y.max()) + 1)
    est = RandomForest(n_trees=n_trees, max_depth=max_depth, seed=seed, n_jobs=n_jobs, **kw)
    est.fit(X, y, n_classes=n_classes)
    return FittedModel("forest", est, schema, {"n_trees": n_trees, "max_depth": max_depth}, n_classes)


def _fit_binary(kind, X, y, reg, forest_kw, schema=None) -> FittedModel:
    if kind == "logistic":
        return fit_logistic(X, y, reg=reg, schema=schema)
    if kind == "forest":
        return fit_forest(X, y, schema=schema, **forest_kw)
    raise InvalidArgumentError(f"unknown model kind {kind!r}; choose from {KINDS}")


# outcome ---------------------------------------------------------------------


class OutcomeModel:
    def __init__(self, fitted: FittedModel, position: int, spec: FeatureSetSpec):
        self.fitted = fitted
        self.position = position
        self.spec = spec

    @property
    def uses_allocation(self) -> bool:
        """Whether any input column depends on the allocation (required for counterfactual use)."""
        if self.spec.variant != "discovered":
            return True
        self_cols = {f"d2_x{self.position}_"}
        return any(
            not any(c.startswith(s) for s in self_cols) for c in self.spec.discovered_parents
        )

    def predict(self, d, rule=None) -> np.ndarray:
        names, M = outcome_columns(d, self.position, self.spec, rule)
        if names != self.fitted.schema:
            raise InvalidArgumentError(f"prediction columns {names} do not match training schema {self.fitted.schema}")
        return self.fitted.predict_proba(M)

    def to_dict(self) -> dict:
        return {"position": self.position, "spec": self.spec.to_dict(), "model": self.fitted.to_dict()}

    @classmethod
    def from_dict(cls, doc) -> "OutcomeModel":
        return cls(FittedModel.from_dict(doc["model"]), doc["position"], FeatureSetSpec.from_dict(doc["spec"]))


def fit_outcome(
    d,
    position: int,
    spec: FeatureSetSpec | str = "block-cross",
    kind: str = "logistic",
    reg: float = 1e-6,
    n_trees: int = 200,
    max_depth: int = 6,
    seed: int = 0,
    n_jobs: int = 1,
) -> OutcomeModel:
    spec = FeatureSetSpec(spec) if isinstance(spec, str) else spec
    names, X = outcome_columns(d, position, spec)
    y = d.y[:, position - 1]
    forest_kw = {"n_trees": n_trees, "max_depth": max_depth, "seed": seed, "n_jobs": n_jobs}
    return OutcomeModel(_fit_binary(kind, X, y, reg, forest_kw, schema=names), position, spec)


# propensity ------------------------------------------------------------------


class PropensityModel:
    """p(A = rule | X) over valid rules.

    joint: one multiclass model over the m+1 rules. product: one binary model per
    position for p(A_i = 1 | X); rule probabilities are products of the
    per-position terms renormalized over the valid rules.
    """

    def __init__(self, m, mode, kind, models, present=None, smoothing=None, constants=None):
        self.m = m
        self.mode = mode
        self.kind = kind
        self.models = models
        self.present = present
        self.smoothing = smoothing
        self.constants = constants or {}

    def predict(self, d) -> np.ndarray:
        X = propensity_features(d)
        n, R = len(X), self.m + 1
        if self.mode == "joint":
            probs = np.zeros((n, R))
            probs[:, self.present] = self.models[0].predict_proba(X).reshape(n, -1)
            if self.smoothing:
                probs = self.smoothing + (1 - R * self.smoothing) * probs
            return probs
        return self._product(X, normalize=True)

    def unnormalized_product(self, d) -> np.ndarray:
        """The literal product of per-position marginals, without renormalization."""
        if self.mode != "product":
            raise InvalidArgumentError("only product-mode models have per-position marginals")
        return self._product(propensity_features(d), normalize=False)

    def _product(self, X, normalize: bool) -> np.ndarray:
        n = len(X)
        top = np.zeros((n, self.m))
        for i in range(self.m):
            if i in self.constants:
                top[:, i] = self.constants[i]
            else:
                top[:, i] = self.models[i].predict_proba(X)
        rules = np.array([r.bits for r in enumerate_valid_rules(self.m)])
        probs = np.ones((n, len(rules)))
        for r, bits in enumerate(rules):
            for i, b in enumerate(bits):
                probs[:, r] *= top[:, i] if b else 1 - top[:, i]
        if normalize:
            probs /= probs.sum(axis=1, keepdims=True)
        return probs

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "mode": self.mode,
            "kind": self.kind,
            "present": None if self.present is None else [int(v) for v in self.present],
            "smoothing": self.smoothing,
            "constants": {str(k): v for k, v in self.constants.items()},
            "models": [None if mdl is None else mdl.to_dict() for mdl in self.models],
        }

    @classmethod
    def from_dict(cls, doc) -> "PropensityModel":
        models = [None if mdl is None else FittedModel.from_dict(mdl) for mdl in doc["models"]]
        present = None if doc["present"] is None else np.asarray(doc["present"])
        constants = {int(k): v for k, v in doc.get("constants", {}).items()}
        return cls(doc["m"], doc["mode"], doc["kind"], models, present, doc.get("smoothing"), constants)


def fit_propensity(
    d,
    mode: str = "joint",
    kind: str = "logistic",
    smoothing: float | None = None,
    reg: float = 1e-6,
    n_trees: int = 200,
    max_depth: int = 6,
    seed: int = 0,
    n_jobs: int = 1,
) -> PropensityModel:
    if mode not in ("joint", "product"):
        raise InvalidArgumentError(f"unknown propensity mode {mode!r}")
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown model kind {kind!r}")
    X = propensity_features(d)
    schema = list(d.schema)
    forest_kw = {"n_trees": n_trees, "max_depth": max_depth, "seed": seed, "n_jobs": n_jobs}
    R = d.m + 1
    if mode == "joint":
        labels = d.rule_idx
        counts = np.bincount(labels, minlength=R)
        missing = np.flatnonzero(counts == 0)
        if len(missing) and smoothing is None:
            names = [enumerate_valid_rules(d.m)[k].label() for k in missing]
            raise InvalidArgumentError(
                f"rules {names} are never observed; positivity fails (pass a smoothing epsilon, "
                "or 0 to give unobserved rules probability zero)"
            )
        present = np.flatnonzero(counts > 0)
        remap = np.full(R, -1)
        remap[present] = np.arange(len(present))
        y = remap[labels]
        if len(present) == 1:
            model = FittedModel("constant", _Constant(1), schema, {}, 1, multiclass=True)
        elif kind == "logistic":
            est = MultinomialLogisticRegression(reg=reg).fit(X, y, n_classes=len(present))
            model = FittedModel("logistic", est, schema, dict(est.diagnostics), len(present), multiclass=True)
        else:
            est = RandomForest(**forest_kw).fit(X, y, n_classes=len(present))
            model = FittedModel("forest", est, schema, {"n_trees": n_trees}, len(present), multiclass=True)
        return PropensityModel(d.m, "joint", kind, [model], present, smoothing if len(missing) else None)
    models, constants = [], {}
    for i in range(d.m):
        y = d.a[:, i]
        if len(np.unique(y)) < 2:
            constants[i] = float(np.clip(y.mean(), 1e-3, 1 - 1e-3))
            models.append(None)
            continue
        models.append(_fit_binary(kind, X, y, reg, forest_kw, schema=schema))
    return PropensityModel(d.m, "product", kind, models, constants=constants)


class _Constant:
    def __init__(self, k):
        self.k = k

    def predict_proba(self, X):
        return np.ones((len(X), self.k))

    def to_dict(self):
        return {"k": self.k}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["k"])


# oracle stand-ins ----------------------------------------------------------------


class TrueOutcomeModel:
    """Exact E[Y_i | A, X] under a SemConfig (U integrated out)."""

    uses_allocation = True

    def __init__(self, cfg, position: int):
        self.cfg = cfg
        self.position = position

    def predict(self, d, rule=None) -> np.ndarray:
        from interference_lab.sem import true_outcome_regression

        return true_outcome_regression(self.cfg, d.x, _alloc(d, rule), self.position)


class TruePropensityModel:
    def __init__(self, cfg):
        self.cfg = cfg

    def predict(self, d) -> np.ndarray:
        from interference_lab.sem import propensity_probs

        return propensity_probs(self.cfg, d.x)


class UniformPropensity:
    def __init__(self, m: int):
        self.m = m

    def predict(self, d) -> np.ndarray:
        return np.full((d.n, self.m + 1), 1.0 / (self.m + 1))


class FixedPropensity:
    """Same rule distribution for every pageview."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def predict(self, d) -> np.ndarray:
        return np.broadcast_to(self.probs, (d.n, len(self.probs))).copy()


class ConstantOutcomeModel:
    """Predicts ``c`` for every pageview and allocation (trivially a function of A and X)."""

    uses_allocation = True

    def __init__(self, c: float):
        self.c = float(c)

    def predict(self, d, rule=None) -> np.ndarray:
        return np.full(d.n, self.c)


def rule_column(rule: AllocationRule, m: int) -> int:
    return [r.label() for r in enumerate_valid_rules(m)].index(as_rule(rule).label())
