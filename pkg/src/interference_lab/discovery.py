"""Conditional-independence tests and target-local parent discovery on the D1/D2 table.

Every feature and allocation column is known to precede the outcome, so any
candidate that stays dependent on the outcome given every tested subset of
the other surviving candidates is reported as a parent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from interference_lab.errors import InvalidArgumentError, NumericalError

CATEGORIES = ("self-ad", "same-block", "cross-block", "allocation")
KERNEL_MAX_ROWS = 5000


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    p_value: float
    independent: bool
    conditioning: tuple[str, ...] = ()
    x: str = ""
    y: str = ""

    def as_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "conditioning": "|".join(self.conditioning),
            "statistic": self.statistic,
            "p_value": self.p_value,
            "independent": self.independent,
        }


def _columns(data, names) -> np.ndarray:
    if isinstance(data, pd.DataFrame):
        missing = [c for c in names if c not in data.columns]
        if missing:
            raise InvalidArgumentError(f"unknown columns {missing}")
        return data[list(names)].to_numpy(dtype=float)
    arr = np.asarray(data, dtype=float)
    return arr[:, [int(c) for c in names]]


def _prepare(data, x, y, z):
    z = tuple(z)
    if x == y:
        raise InvalidArgumentError("x and y must differ")
    if x in z or y in z:
        return None, z
    return _columns(data, (x, y) + z), z


def _collinear(M: np.ndarray, names) -> list[str]:
    """Columns of M that are (numerically) linear combinations of earlier columns or constant."""
    out = []
    basis = np.ones((len(M), 1))
    for c in range(M.shape[1]):
        col = M[:, c]
        resid = col - basis @ np.linalg.lstsq(basis, col, rcond=None)[0]
        if np.linalg.norm(resid) <= 1e-8 * max(1.0, np.linalg.norm(col)):
            out.append(str(names[c]))
        else:
            basis = np.column_stack([basis, col])
    return out


def fisher_z_test(data, x, y, z=(), alpha: float = 0.05) -> CiTestResult:
    """Partial-correlation test of x _||_ y | z from least-squares residuals."""
    M, z = _prepare(data, x, y, z)
    if M is None:
        return CiTestResult(0.0, 1.0, True, z, str(x), str(y))
    n = len(M)
    if len(z) + 2 > n - 3:
        raise InvalidArgumentError(f"need more than {len(z) + 5} rows for a conditioning set of size {len(z)}")
    design = np.column_stack([np.ones(n), M[:, 2:]])
    if len(z):
        bad = _collinear(M[:, 2:], z)
        if bad:
            raise NumericalError(f"conditioning columns are collinear or constant: {bad}")
    coef = np.linalg.lstsq(design, M[:, :2], rcond=None)[0]
    resid = M[:, :2] - design @ coef
    sx, sy = np.linalg.norm(resid[:, 0]), np.linalg.norm(resid[:, 1])
    if sx == 0 or sy == 0:
        raise NumericalError(f"{x if sx == 0 else y} is fully explained by the conditioning set")
    rho = float(np.clip(resid[:, 0] @ resid[:, 1] / (sx * sy), -1 + 1e-15, 1 - 1e-15))
    return _z_result(rho, n, len(z), alpha, z, x, y)


def _z_result(rho, n, k, alpha, z, x, y) -> CiTestResult:
    stat = math.sqrt(n - k - 3) * math.atanh(rho)
    p = float(2.0 * norm.sf(abs(stat)))
    return CiTestResult(stat, p, p > alpha, tuple(z), str(x), str(y))


class _CorrelationTester:
    """Fisher-z tests on a fixed table via its correlation matrix (same result as residualizing)."""

    def __init__(self, df: pd.DataFrame):
        self.names = list(df.columns)
        self.index = {c: k for k, c in enumerate(self.names)}
        self.n = len(df)
        self.corr = np.corrcoef(df.to_numpy(dtype=float), rowvar=False)

    def __call__(self, x, y, z, alpha) -> CiTestResult:
        idx = [self.index[c] for c in (x, y, *z)]
        sub = self.corr[np.ix_(idx, idx)]
        try:
            prec = np.linalg.inv(sub)
        except np.linalg.LinAlgError:
            raise NumericalError(f"conditioning columns are collinear: {list(z)}") from None
        rho = -prec[0, 1] / math.sqrt(prec[0, 0] * prec[1, 1])
        return _z_result(float(np.clip(rho, -1 + 1e-15, 1 - 1e-15)), self.n, len(z), alpha, z, x, y)


# kernel test ---------------------------------------------------------------------


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std(axis=0)
    return (v - v.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def _median_bandwidth(v: np.ndarray, rng) -> float:
    rows = v if len(v) <= 1000 else v[rng.choice(len(v), 1000, replace=False)]
    d2 = ((rows[:, None, :] - rows[None, :, :]) ** 2).sum(axis=-1)
    med = np.median(d2[np.triu_indices(len(rows), 1)])
    return float(math.sqrt(med / 2.0)) if med > 0 else 1.0


def _fourier(v: np.ndarray, base: np.ndarray, phase: np.ndarray, bandwidth: float) -> np.ndarray:
    """Random Fourier features of a Gaussian kernel with the given bandwidth."""
    w = base[: v.shape[1]] / bandwidth
    feats = math.sqrt(2.0 / len(phase)) * np.cos(v @ w + phase)
    return feats - feats.mean(axis=0)


def kernel_ci_test(
    data,
    x,
    y,
    z=(),
    alpha: float = 0.05,
    n_perm: int = 200,
    max_rows: int = KERNEL_MAX_ROWS,
    subsample: bool = False,
    n_features: int = 50,
    ridge: float = 1e-3,
    seed: int = 0,
) -> CiTestResult:
    """Kernel conditional-dependence test with a permutation null.

    x and y are first residualized on z by ridge regression on Gaussian-kernel
    random features of z. The statistic is n times the squared Hilbert-Schmidt
    norm of the cross-covariance between Gaussian-kernel features of the two
    residuals (median-heuristic bandwidths); the null permutes one residual.
    The same base frequencies serve both variables, so the statistic is
    symmetric in x and y.
    """
    M, z = _prepare(data, x, y, z)
    if M is None:
        return CiTestResult(0.0, 1.0, True, z, str(x), str(y))
    if n_perm < 1:
        raise InvalidArgumentError("n_perm must be >= 1")
    rng = np.random.default_rng([seed, len(M)])
    if len(M) > max_rows:
        if not subsample:
            raise InvalidArgumentError(
                f"{len(M)} rows exceed the kernel-test cap of {max_rows}; pass subsample=True"
            )
        M = M[np.sort(rng.choice(len(M), max_rows, replace=False))]
    n = len(M)
    M = _standardize(M)
    dims = max(1, M.shape[1] - 2)
    base = rng.standard_normal((dims, n_features))
    phase = rng.uniform(0, 2 * math.pi, n_features)
    rx, ry = M[:, [0]], M[:, [1]]
    if z:
        Zs = M[:, 2:]
        phi = _fourier(Zs, base, phase, _median_bandwidth(Zs, rng))
        design = np.column_stack([np.ones(n), Zs, phi])
        gram = design.T @ design + ridge * n * np.eye(design.shape[1])
        coef = np.linalg.solve(gram, design.T @ M[:, :2])
        resid = M[:, :2] - design @ coef
        rx, ry = _standardize(resid[:, [0]]), _standardize(resid[:, [1]])
    fx = _fourier(rx, base, phase, _median_bandwidth(rx, rng))
    fy = _fourier(ry, base, phase, _median_bandwidth(ry, rng))
    stat = float(np.sum((fx.T @ fy) ** 2) / n)
    fx32, fy32 = fx.astype(np.float32), fy.astype(np.float32)
    perm_rng = np.random.default_rng([seed, n, 1])
    exceed = 0
    for _ in range(n_perm):
        null = float(np.sum((fx32.T @ fy32[perm_rng.permutation(n)]) ** 2) / n)
        exceed += null >= stat
    p = (1 + exceed) / (1 + n_perm)
    return CiTestResult(stat, p, p > alpha, z, str(x), str(y))


# parent discovery ------------------------------------------------------------------


def categorize(column: str, target: str) -> str:
    """Tag a discovery-table column relative to the target outcome ``y{i}``."""
    i = target[1:]
    if column.startswith("a"):
        return "allocation"
    kind, rest = column.split("_", 1)
    j = rest.split("_", 1)[0][1:]
    if j == i:
        return "self-ad"
    return "same-block" if kind == "d2" else "cross-block"


@dataclass
class ParentSet:
    target: str
    parents: list[str]
    categories: dict[str, str]
    alpha: float
    test: str
    trace: list[CiTestResult] = field(default_factory=list, repr=False)
    dropped_constant: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "alpha": self.alpha,
            "test": self.test,
            "parents": [{"column": c, "category": self.categories[c]} for c in self.parents],
            "dropped_constant": list(self.dropped_constant),
            "n_tests": len(self.trace),
        }

    def trace_frame(self) -> pd.DataFrame:
        cols = ["x", "y", "conditioning", "statistic", "p_value", "independent"]
        return pd.DataFrame([t.as_dict() for t in self.trace], columns=cols)


def replay(candidates, trace, alpha: float) -> list[str]:
    """Parents implied by a recorded trace at another level: a candidate is removed
    iff some recorded test on it accepts independence at ``alpha``."""
    removed = {t.x for t in trace if t.p_value > alpha}
    return sorted(c for c in candidates if c not in removed)


def discover_parents(
    table: pd.DataFrame,
    target: str,
    alpha: float = 0.01,
    test: str = "fisher_z",
    max_cond: int = 3,
    kernel_options: dict | None = None,
) -> ParentSet:
    """Target-local, order-independent PC adjacency search for the parents of ``target``.

    Candidates are every non-outcome column with nonzero variance, visited in
    lexicographic order. At conditioning size l, each surviving candidate c is
    tested against the target given every size-l subset of the other
    candidates that survived the previous level; removals take effect at the end
    of the level, so the result does not depend on column order.
    """
    if max_cond < 0:
        raise InvalidArgumentError("max_cond must be >= 0")
    if target not in table.columns:
        raise InvalidArgumentError(f"target column {target!r} not in table")
    if test not in ("fisher_z", "kernel"):
        raise InvalidArgumentError(f"unknown test {test!r}; choose fisher_z or kernel")
    outcomes = {c for c in table.columns if c.startswith("y")}
    pool = sorted(c for c in table.columns if c not in outcomes)
    spread = table[pool].to_numpy(dtype=float).std(axis=0) if pool else np.zeros(0)
    dropped = [c for c, s in zip(pool, spread) if s == 0]
    candidates = [c for c, s in zip(pool, spread) if s > 0]

    if test == "fisher_z":
        tester = _CorrelationTester(table[candidates + [target]])
        run = lambda c, s: tester(c, target, s, alpha)  # noqa: E731
    else:
        opts = {"subsample": True, **(kernel_options or {})}
        data = table[candidates + [target]]
        run = lambda c, s: kernel_ci_test(data, c, target, s, alpha, **opts)  # noqa: E731

    adj = list(candidates)
    trace: list[CiTestResult] = []
    for level in range(max_cond + 1):
        if len(adj) - 1 < level:
            break
        removed = set()
        for c in adj:
            others = [o for o in adj if o != c]
            for subset in itertools.combinations(others, level):
                res = run(c, subset)
                trace.append(res)
                if res.independent:
                    removed.add(c)
                    break
        adj = [c for c in adj if c not in removed]
    return ParentSet(target, adj, {c: categorize(c, target) for c in adj}, alpha, test, trace, dropped)


def true_parents(cfg, position: int) -> list[str]:
    """Discovery-table columns that enter the outcome law of ``y{position}`` under a SemConfig."""
    arr = cfg.arrays
    out = []
    for j in range(1, cfg.m + 1):
        for k in range(1, cfg.p + 1):
            same = arr["gamma"][k - 1] + (arr["theta_self"][k - 1] if j == position else 0.0)
            if same != 0:
                out.append(f"d2_x{j}_{k}")
            if j != position and arr["eta"][k - 1] != 0:
                out.append(f"d1_x{j}_{k}")
    return sorted(out)


def precision_recall(found, truth) -> tuple[float, float]:
    found, truth = set(found), set(truth)
    hit = len(found & truth)
    precision = hit / len(found) if found else 1.0
    recall = hit / len(truth) if truth else 1.0
    return precision, recall
