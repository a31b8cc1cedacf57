"""Named SemConfig presets used by the fixtures, the CLI and the acceptance suite."""

from __future__ import annotations

from importlib import resources

import pandas as pd

from interference_lab.errors import InvalidArgumentError
from interference_lab.sem import SemConfig, quality_propensity


def golden(seed: int = 20240601) -> SemConfig:
    """Reference configuration: block-level effects on features 1-2, cross-block on feature 3.

    Feature 4 drives nothing in the outcome and only enters through the latent
    query, which makes it a natural decoy for parent discovery.
    """
    m, p = 3, 4
    w, b = quality_propensity(m, p, [0.2, 0.12, -0.12, 0.0], intercepts=[0.0, 0.2, 0.2, 0.1])
    return SemConfig(
        m=m,
        p=p,
        lambda_u=0.1,
        beta0=-2.9,
        delta=[0.2, 0.0, -0.2],
        gamma=[0.5, -0.5, 0.0, 0.0],
        eta=[0.0, 0.0, 0.45, 0.0],
        theta_self=[0.0, 0.0, 0.0, 0.0],
        w_prop=w,
        b_prop=b,
        eps_pos=0.02,
        sigma_c=1.0,
        sigma_x=1.0,
        # features 1, 2 and 4 load equally on the query and gamma sums to zero over
        # features 1-2, so the query moves clicks only through the small homophily term
        x_basis=[[0.6, 0.6, 0.0, 0.6]] * m,
        x_offset=[[0.8, 0.0, 0.6, 0.0], [0.5, 0.0, 0.4, 0.0], [0.2, 0.0, 0.2, 0.0]],
        seed=seed,
        name="golden",
    )


def strong_cross(seed: int = 7) -> SemConfig:
    """Strong cross-ad effects and a feature-dependent allocation, so that ignoring
    other ads' features (or the allocation law) biases the naive estimators."""
    m, p = 3, 4
    w, b = quality_propensity(m, p, [0.6, 0.3, -0.4, 0.0], intercepts=[0.0, 0.3, 0.3, 0.1])
    return SemConfig(
        m=m,
        p=p,
        lambda_u=0.2,
        beta0=-1.8,
        delta=[0.4, 0.0, -0.3],
        gamma=[0.8, -0.6, 0.0, 0.3],
        eta=[-0.5, 0.0, 0.9, 0.0],
        theta_self=[0.3, 0.0, 0.0, 0.0],
        w_prop=w,
        b_prop=b,
        eps_pos=0.02,
        x_basis=[[0.6] * p] * m,
        x_offset=[[0.8, 0.4, 0.6, 0.0], [0.5, 0.2, 0.4, 0.0], [0.2, 0.0, 0.2, 0.0]],
        seed=seed,
        name="strong-cross",
    )


def self_only(seed: int = 11) -> SemConfig:
    """No interference and no homophily: each click depends on its own ad's features only."""
    m, p = 3, 4
    base = golden(seed)
    return base.replace(
        lambda_u=0.0,
        beta0=-1.5,
        gamma=[0.0] * p,
        eta=[0.0] * p,
        theta_self=[0.6, -0.4, 0.3, 0.0],
        name="self-only",
    )


def null(seed: int = 13) -> SemConfig:
    """No signal at all: every click probability is sigmoid(beta0 + delta_i)."""
    return golden(seed).replace(lambda_u=0.0, gamma=[0.0] * 4, eta=[0.0] * 4, name="null")


PRESETS = {"golden": golden, "strong-cross": strong_cross, "self-only": self_only, "null": null}


def preset(name: str, seed: int | None = None) -> SemConfig:
    if name not in PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]() if seed is None else PRESETS[name](seed)


def fixture_path(name: str):
    return resources.files("interference_lab") / "fixtures" / name


def golden_oracle() -> pd.DataFrame:
    """Frozen oracle means of the golden config (10^6 Monte Carlo draws, seed 20240601)."""
    with fixture_path("golden_oracle.csv").open() as fh:
        return pd.read_csv(fh, dtype={"rule": str}, float_precision="round_trip")


def golden_fixture() -> SemConfig:
    return SemConfig.from_json(fixture_path("golden.json").read_text())
