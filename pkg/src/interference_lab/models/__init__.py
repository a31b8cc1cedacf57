from interference_lab.models.forest import RandomForest
from interference_lab.models.logistic import LogisticRegression, MultinomialLogisticRegression
from interference_lab.models.metrics import auc, log_loss
from interference_lab.models.nuisance import (
    ConstantOutcomeModel,
    FeatureSetSpec,
    FittedModel,
    FixedPropensity,
    OutcomeModel,
    PropensityModel,
    TrueOutcomeModel,
    TruePropensityModel,
    UniformPropensity,
    fit_forest,
    fit_logistic,
    fit_outcome,
    fit_propensity,
    outcome_features,
)

__all__ = [
    "ConstantOutcomeModel",
    "FeatureSetSpec",
    "FittedModel",
    "FixedPropensity",
    "LogisticRegression",
    "MultinomialLogisticRegression",
    "OutcomeModel",
    "PropensityModel",
    "RandomForest",
    "TrueOutcomeModel",
    "TruePropensityModel",
    "UniformPropensity",
    "auc",
    "fit_forest",
    "fit_logistic",
    "fit_outcome",
    "fit_propensity",
    "log_loss",
    "outcome_features",
]
