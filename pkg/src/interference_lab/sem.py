"""Structural equation simulator for pageviews and its Monte Carlo counterfactual oracle.

Generative law for one pageview with m ads and p features per ad::

    U   ~ N(0, 1)                                   user intent (latent)
    C   = U + sigma_c * e_c                         query (latent)
    X_j = x_offset[j] + C * x_basis[j] + sigma_x * e_xj
    A   ~ eps_pos + (1 - (m+1) eps_pos) * softmax(w_prop @ vec(X) + b_prop)   over valid rules
    Y_i ~ Bernoulli(sigmoid(beta0 + delta_i + lambda_u U + theta_self' X_i
                            + sum_j [1(A_j = A_i) gamma' X_j + 1(A_j != A_i) eta' X_j]))

Intervening on the allocation replaces the draw of A by a fixed rule and leaves
every other mechanism untouched.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd
from scipy.special import expit, softmax

from interference_lab.errors import InvalidArgumentError
from interference_lab.rules import AllocationRule, as_rule, enumerate_valid_rules, rule_index

CHUNK = 8192
_SIM_STREAM = 0
_ORACLE_STREAM = 1


@dataclass
class SemConfig:
    m: int = 3
    p: int = 4
    lambda_u: float = 0.0
    beta0: float = 0.0
    delta: list[float] | None = None
    gamma: list[float] | None = None
    eta: list[float] | None = None
    theta_self: list[float] | None = None
    w_prop: list[list[float]] | None = None
    b_prop: list[float] | None = None
    eps_pos: float = 0.02
    sigma_c: float = 1.0
    sigma_x: float = 1.0
    x_basis: list[list[float]] | None = None
    x_offset: list[list[float]] | None = None
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        m, p = int(self.m), int(self.p)
        if m < 1 or p < 1:
            raise InvalidArgumentError(f"need m >= 1 and p >= 1, got m={m}, p={p}")
        self.m, self.p = m, p
        self.delta = _vec(self.delta, m, "delta")
        self.gamma = _vec(self.gamma, p, "gamma")
        self.eta = _vec(self.eta, p, "eta")
        self.theta_self = _vec(self.theta_self, p, "theta_self")
        self.b_prop = _vec(self.b_prop, m + 1, "b_prop")
        self.w_prop = _mat(self.w_prop, (m + 1, m * p), "w_prop", 0.0)
        self.x_basis = _mat(self.x_basis, (m, p), "x_basis", 1.0)
        self.x_offset = _mat(self.x_offset, (m, p), "x_offset", 0.0)
        if not (self.sigma_c > 0 and self.sigma_x > 0):
            raise InvalidArgumentError("noise scales sigma_c and sigma_x must be positive")
        if not 0 < self.eps_pos * (m + 1) < 1:
            raise InvalidArgumentError(
                f"eps_pos must lie in (0, 1/(m+1)) = (0, {1 / (m + 1):.4f}), got {self.eps_pos}"
            )
        self.seed = int(self.seed)

    # arrays -----------------------------------------------------------------
    @property
    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "delta": np.asarray(self.delta),
            "gamma": np.asarray(self.gamma),
            "eta": np.asarray(self.eta),
            "theta_self": np.asarray(self.theta_self),
            "w_prop": np.asarray(self.w_prop),
            "b_prop": np.asarray(self.b_prop),
            "x_basis": np.asarray(self.x_basis),
            "x_offset": np.asarray(self.x_offset),
        }

    def replace(self, **changes) -> "SemConfig":
        doc = self.to_dict()
        doc.update(changes)
        return SemConfig(**doc)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "SemConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown SemConfig fields: {unknown}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path_or_text) -> "SemConfig":
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _vec(value, n, name):
    if value is None:
        return [0.0] * n
    arr = np.asarray(value, dtype=float).ravel()
    if arr.shape != (n,):
        raise InvalidArgumentError(f"{name} must have length {n}, got {arr.size}")
    return arr.tolist()


def _mat(value, shape, name, fill):
    if value is None:
        return np.full(shape, fill).tolist()
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise InvalidArgumentError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr.tolist()


def quality_propensity(
    m: int, p: int, ad_weights, intercepts=None, scale: float = 1.0
) -> tuple[list[list[float]], list[float]]:
    """Build (w_prop, b_prop) where a rule with k Top ads scores ``scale * sum_{j<=k} w'X_j + b_k``.

    Rules are ordered as in ``enumerate_valid_rules`` (k = m first).
    """
    w = np.asarray(ad_weights, dtype=float)
    if w.shape != (p,):
        raise InvalidArgumentError(f"ad_weights must have length {p}")
    rows = []
    for k in range(m, -1, -1):
        row = np.zeros((m, p))
        row[:k] = w * scale
        rows.append(row.ravel())
    b = np.zeros(m + 1) if intercepts is None else np.asarray(intercepts, dtype=float)
    return np.array(rows).tolist(), b.tolist()


# laws ------------------------------------------------------------------------


def propensity_probs(cfg: SemConfig, x: np.ndarray) -> np.ndarray:
    """True p(A = rule | X) for each valid rule, columns in ``enumerate_valid_rules`` order."""
    x = np.asarray(x, dtype=float)
    arr = cfg.arrays
    scores = x.reshape(len(x), -1) @ arr["w_prop"].T + arr["b_prop"]
    return cfg.eps_pos + (1.0 - (cfg.m + 1) * cfg.eps_pos) * softmax(scores, axis=1)


def outcome_logits(cfg: SemConfig, x: np.ndarray, a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(N, m) linear predictors of every ad's click given U, X and the allocation bits."""
    arr = cfg.arrays
    x = np.asarray(x, dtype=float)
    a = np.broadcast_to(np.asarray(a), x.shape[:2])
    same = a[:, :, None] == a[:, None, :]
    gx = x @ arr["gamma"]
    hx = x @ arr["eta"]
    cross = np.where(same, gx[:, None, :], hx[:, None, :]).sum(axis=2)
    return (
        cfg.beta0
        + arr["delta"][None, :]
        + cfg.lambda_u * np.asarray(u)[:, None]
        + x @ arr["theta_self"]
        + cross
    )


def posterior_u(cfg: SemConfig, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Mean and variance of U given all features (linear-Gaussian conjugacy)."""
    arr = cfg.arrays
    x = np.asarray(x, dtype=float)
    prior_c = 1.0 + cfg.sigma_c**2
    basis = arr["x_basis"]
    prec = 1.0 / prior_c + float((basis**2).sum()) / cfg.sigma_x**2
    resid = x - arr["x_offset"]
    mean_c = (resid * basis).sum(axis=(1, 2)) / cfg.sigma_x**2 / prec
    mean_u = mean_c / prior_c
    var_u = cfg.sigma_c**2 / prior_c + (1.0 / prec) / prior_c**2
    return mean_u, var_u


_GH_T, _GH_W = np.polynomial.hermite.hermgauss(40)


def true_outcome_regression(cfg: SemConfig, x: np.ndarray, a, position: int) -> np.ndarray:
    """E[Y_position | A = a, X] with U integrated out by Gauss-Hermite quadrature."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a.bits if isinstance(a, AllocationRule) else a)
    mean_u, var_u = posterior_u(cfg, x)
    base = outcome_logits(cfg, x, a, np.zeros(len(x)))[:, position - 1]
    nodes = mean_u[:, None] + np.sqrt(2.0 * var_u) * _GH_T[None, :]
    return expit(base[:, None] + cfg.lambda_u * nodes) @ _GH_W / np.sqrt(np.pi)


# data ------------------------------------------------------------------------


@dataclass(frozen=True)
class Pageview:
    id: int
    x: np.ndarray
    a: AllocationRule
    y: np.ndarray


@dataclass
class Dataset:
    """N pageviews stored column-wise: ``x`` (N, m, p), ``a`` (N, m), ``y`` (N, m)."""

    ids: np.ndarray
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    provenance: str = "external"
    latent: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=float)
        self.a = np.asarray(self.a, dtype=np.int8)
        self.y = np.asarray(self.y, dtype=np.int8)
        n = len(self.ids)
        if self.x.ndim != 3 or self.x.shape[0] != n:
            raise InvalidArgumentError(f"x must have shape (N, m, p) with N={n}, got {self.x.shape}")
        m = self.x.shape[1]
        if self.a.shape != (n, m) or self.y.shape != (n, m):
            raise InvalidArgumentError("a and y must have shape (N, m) matching x")
        if n and not np.isin(self.y, (0, 1)).all():
            raise InvalidArgumentError("clicks must be 0/1")
        if n:
            rule_index(self.a)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[2]

    @property
    def schema(self) -> list[str]:
        return feature_names(self.m, self.p)

    @property
    def rule_idx(self) -> np.ndarray:
        """Index of each pageview's observed rule in ``enumerate_valid_rules(m)``."""
        return rule_index(self.a) if self.n else np.zeros(0, dtype=int)

    @property
    def pageviews(self) -> Iterator[Pageview]:
        for k in range(self.n):
            yield Pageview(int(self.ids[k]), self.x[k], AllocationRule(tuple(self.a[k])), self.y[k])

    def __len__(self) -> int:
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.ids[idx],
            self.x[idx],
            self.a[idx],
            self.y[idx],
            provenance=self.provenance,
            latent={k: v[idx] for k, v in self.latent.items()},
        )

    def positive_pageviews(self, min_ads: int = 3) -> "Dataset":
        """Pageviews with at least one click and at least ``min_ads`` impressed ads."""
        if self.m < min_ads:
            return self.subset(np.zeros(0, dtype=int))
        return self.subset(np.flatnonzero(self.y.sum(axis=1) > 0))

    def to_frame(self) -> pd.DataFrame:
        n, m, p = self.x.shape
        cols: dict[str, np.ndarray] = {"pv_id": self.ids}
        flat = self.x.reshape(n, m * p)
        for c, name in enumerate(self.schema):
            cols[name] = flat[:, c]
        for i in range(m):
            cols[f"a{i + 1}"] = self.a[:, i].astype(int)
        for i in range(m):
            cols[f"y{i + 1}"] = self.y[:, i].astype(int)
        return pd.DataFrame(cols)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_frame(cls, df: pd.DataFrame, provenance: str = "external") -> "Dataset":
        acols = sorted((c for c in df.columns if c[:1] == "a" and c[1:].isdigit()), key=lambda c: int(c[1:]))
        m = len(acols)
        xcols = [c for c in df.columns if c.startswith("x")]
        if m == 0 or not xcols or len(xcols) % m:
            raise InvalidArgumentError("dataset must have x{i}_{k}, a{i} and y{i} columns")
        p = len(xcols) // m
        expected = feature_names(m, p)
        missing = [c for c in expected + ["pv_id"] + [f"y{i}" for i in range(1, m + 1)] if c not in df.columns]
        if missing:
            raise InvalidArgumentError(f"dataset is missing columns {missing}")
        a = df[acols].to_numpy()
        bad = np.flatnonzero(np.any(a[:, 1:] > a[:, :-1], axis=1)) if m > 1 else np.zeros(0, int)
        if len(bad):
            row = int(bad[0])
            raise InvalidArgumentError(
                f"data row {row + 1} (pv_id {df['pv_id'].iloc[row]}) has invalid allocation "
                f"{tuple(int(v) for v in a[row])}: a Bottom ad precedes a Top ad"
            )
        x = df[expected].to_numpy(dtype=float).reshape(len(df), m, p)
        y = df[[f"y{i}" for i in range(1, m + 1)]].to_numpy()
        return cls(df["pv_id"].to_numpy(), x, a, y, provenance=provenance)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        df = pd.read_csv(path, float_precision="round_trip")
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
        return cls.from_frame(df, provenance=f"csv:{digest}")


def feature_names(m: int, p: int) -> list[str]:
    return [f"x{i}_{k}" for i in range(1, m + 1) for k in range(1, p + 1)]


def empty_dataset(m: int, p: int, provenance: str = "external") -> Dataset:
    return Dataset(
        np.zeros(0, np.int64), np.zeros((0, m, p)), np.zeros((0, m)), np.zeros((0, m)), provenance
    )


# simulation ------------------------------------------------------------------


def _draw_covariates(cfg: SemConfig, rng: np.random.Generator, n: int):
    arr = cfg.arrays
    u = rng.standard_normal(n)
    c = u + cfg.sigma_c * rng.standard_normal(n)
    x = arr["x_offset"][None] + c[:, None, None] * arr["x_basis"][None] + cfg.sigma_x * rng.standard_normal(
        (n, cfg.m, cfg.p)
    )
    return u, c, x


def _chunks(n: int):
    for k, start in enumerate(range(0, n, CHUNK)):
        yield k, start, min(n, start + CHUNK)


def _simulate_chunk(cfg: SemConfig, k: int, n: int):
    rng = np.random.default_rng([cfg.seed, _SIM_STREAM, k])
    u, c, x = _draw_covariates(cfg, rng, n)
    probs = propensity_probs(cfg, x)
    if probs.min() < cfg.eps_pos - 1e-12:
        raise AssertionError("positivity floor violated")
    draws = rng.random(n)
    idx = np.minimum((probs.cumsum(axis=1) < draws[:, None]).sum(axis=1), cfg.m)
    a = (np.arange(cfg.m)[None, :] < (cfg.m - idx)[:, None]).astype(np.int8)
    prob = expit(outcome_logits(cfg, x, a, u))
    y = (rng.random((n, cfg.m)) < prob).astype(np.int8)
    return u, c, x, a, y, prob, probs


def simulate(cfg: SemConfig, n_pageviews: int, n_jobs: int = 1) -> Dataset:
    """Draw ``n_pageviews`` pageviews. Chunk k uses the RNG stream (seed, k), so results
    do not depend on ``n_jobs``."""
    if not isinstance(cfg, SemConfig):
        raise InvalidArgumentError("simulate expects a SemConfig")
    n_pageviews = int(n_pageviews)
    if n_pageviews < 0:
        raise InvalidArgumentError("n_pageviews must be >= 0")
    if n_pageviews == 0:
        return empty_dataset(cfg.m, cfg.p, provenance=f"sem:{cfg.digest()}")
    tasks = list(_chunks(n_pageviews))
    if n_jobs == 1 or len(tasks) == 1:
        parts = [_simulate_chunk(cfg, k, hi - lo) for k, lo, hi in tasks]
    else:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(delayed(_simulate_chunk)(cfg, k, hi - lo) for k, lo, hi in tasks)
    u, c, x, a, y, prob, probs = (np.concatenate(z) for z in zip(*parts))
    return Dataset(
        np.arange(n_pageviews),
        x,
        a,
        y,
        provenance=f"sem:{cfg.digest()}",
        latent={"u": u, "c": c, "click_prob": prob, "propensity": probs},
    )


# oracle ----------------------------------------------------------------------


def _oracle_draws(cfg: SemConfig, n_draws: int):
    for k, lo, hi in _chunks(n_draws):
        rng = np.random.default_rng([cfg.seed, _ORACLE_STREAM, k])
        u, _, x = _draw_covariates(cfg, rng, hi - lo)
        yield u, x


def counterfactual_oracle(cfg: SemConfig, a, position: int, n_draws: int = 100_000) -> tuple[float, float]:
    """Monte Carlo E[Y_position(a)] and its standard error (averages click probabilities)."""
    rule = as_rule(a)
    if rule.m != cfg.m:
        raise InvalidArgumentError(f"rule {rule} has length {rule.m}, config has m={cfg.m}")
    if not 1 <= position <= cfg.m:
        raise InvalidArgumentError(f"position must be in 1..{cfg.m}")
    table = oracle_table(cfg, n_draws, rules=[rule], positions=[position])
    row = table.iloc[0]
    return float(row["psi"]), float(row["se"])


def oracle_table(cfg: SemConfig, n_draws: int = 1_000_000, rules=None, positions=None) -> pd.DataFrame:
    """Oracle means for every (rule, position); all cells share the same covariate draws."""
    if n_draws < 2:
        raise InvalidArgumentError("n_draws must be >= 2")
    rules = enumerate_valid_rules(cfg.m) if rules is None else [as_rule(r) for r in rules]
    positions = list(range(1, cfg.m + 1)) if positions is None else list(positions)
    s1 = np.zeros((len(rules), cfg.m))
    s2 = np.zeros((len(rules), cfg.m))
    for u, x in _oracle_draws(cfg, n_draws):
        for r, rule in enumerate(rules):
            prob = expit(outcome_logits(cfg, x, np.asarray(rule.bits), u))
            s1[r] += prob.sum(axis=0)
            s2[r] += (prob**2).sum(axis=0)
    mean = s1 / n_draws
    var = (s2 - n_draws * mean**2) / (n_draws - 1)
    se = np.sqrt(np.maximum(var, 0.0) / n_draws)
    rows = [
        {"rule": rule.label(), "position": i, "psi": mean[r, i - 1], "se": se[r, i - 1]}
        for r, rule in enumerate(rules)
        for i in positions
    ]
    return pd.DataFrame(rows, columns=["rule", "position", "psi", "se"])


def ground_truth_effects(cfg: SemConfig, position: int, n_draws: int = 200_000) -> pd.DataFrame:
    """UE/SE/OE contrasts of oracle means at one position; MC errors combined in quadrature."""
    from interference_lab.effects import MeanTable, enumerate_contrasts

    table = oracle_table(cfg, n_draws)
    means = MeanTable.from_frame(table, value="psi", se="se")
    rows = [c for c in enumerate_contrasts(means) if c.position == position and c.kind != "AOE"]
    return pd.DataFrame([c.as_row() for c in rows])
