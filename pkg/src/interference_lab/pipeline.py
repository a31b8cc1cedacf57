"""Higher-level workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np
import pandas as pd

from interference_lab.discovery import discover_parents
from interference_lab.errors import InvalidArgumentError, UndefinedMetricError
from interference_lab.models.forest import _mix
from interference_lab.models.metrics import auc
from interference_lab.models.nuisance import VARIANTS, FeatureSetSpec, fit_outcome
from interference_lab.rules import fci_preprocess


def split_by_id(ids, train_frac: float = 0.7, seed: int = 0) -> np.ndarray:
    """Boolean train mask from a hash of each pageview id (independent of row order)."""
    if not 0 < train_frac < 1:
        raise InvalidArgumentError("train_frac must be in (0, 1)")
    key = _mix(np.array([seed], dtype=np.uint64) ^ np.uint64(0x5EED))
    h = _mix(np.asarray(ids, dtype=np.int64).astype(np.uint64) ^ key[0])
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return u < train_frac


def discovered_spec(train, position: int, alpha: float = 0.01, test: str = "fisher_z", max_cond: int = 3):
    ps = discover_parents(fci_preprocess(train, position), f"y{position}", alpha, test, max_cond)
    return ps, (FeatureSetSpec("discovered", tuple(ps.parents)) if ps.parents else None)


def predict_eval(
    d,
    kind: str = "logistic",
    variants=VARIANTS,
    positions=None,
    train_frac: float = 0.7,
    seed: int = 0,
    alpha: float = 0.01,
    discovered: dict | None = None,
    n_trees: int = 200,
    max_depth: int = 6,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Held-out AUC of each outcome-model variant and its difference from the baseline.

    ``discovered`` maps position -> parent columns; when absent, parents are
    discovered on the training split with the Fisher-z test at ``alpha``.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise InvalidArgumentError(f"unknown variants {unknown}")
    positions = list(range(1, d.m + 1)) if positions is None else list(positions)
    mask = split_by_id(d.ids, train_frac, seed)
    train, test = d.subset(np.flatnonzero(mask)), d.subset(np.flatnonzero(~mask))
    rows = []
    for i in positions:
        y_test = test.y[:, i - 1]
        base_auc = None
        for v in ["baseline"] + [v for v in variants if v != "baseline"]:
            if v == "discovered":
                if discovered is not None and discovered.get(i):
                    spec = FeatureSetSpec("discovered", tuple(discovered[i]))
                else:
                    _, spec = discovered_spec(train, i, alpha)
                if spec is None:
                    rows.append({"position": i, "variant": v, "auc": np.nan, "n_features": 0})
                    continue
            else:
                spec = FeatureSetSpec(v)
            model = fit_outcome(train, i, spec, kind=kind, n_trees=n_trees, max_depth=max_depth, seed=seed, n_jobs=n_jobs)
            try:
                value = auc(model.predict(test), y_test)
            except UndefinedMetricError:
                value = np.nan
            if v == "baseline":
                base_auc = value
            rows.append({"position": i, "variant": v, "auc": value, "n_features": len(model.fitted.schema)})
        for r in rows:
            if r["position"] == i:
                r["abs_diff"] = r["auc"] - base_auc
                r["rel_diff"] = (r["auc"] - base_auc) / base_auc
    out = pd.DataFrame(rows, columns=["position", "variant", "auc", "n_features", "abs_diff", "rel_diff"])
    keep = [v for v in VARIANTS if v in variants or v == "baseline"]
    order = {v: k for k, v in enumerate(keep)}
    out = out[out["variant"].isin(keep)]
    return out.sort_values(["position", "variant"], key=lambda s: s.map(order) if s.name == "variant" else s).reset_index(
        drop=True
    )
