"""Interference contrasts (unit-level, spillover, overall, average overall) over counterfactual means."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.stats import norm

from interference_lab.errors import InvalidArgumentError
from interference_lab.rules import AllocationRule, as_rule, enumerate_valid_rules


@dataclass(frozen=True)
class EffectEstimate:
    value: float
    stderr: float = 0.0
    ci: tuple[float, float] | None = None
    estimator: str = "aipw"
    target: str = ""
    n_used: int = 0
    level: float = 0.95
    diagnostics: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.ci is None:
            object.__setattr__(self, "ci", (self.value, self.value))
        if self.stderr < 0:
            raise InvalidArgumentError("stderr must be nonnegative")

    @property
    def half_width(self) -> float:
        return (self.ci[1] - self.ci[0]) / 2.0

    def as_dict(self) -> dict:
        return {
            "target": self.target,
            "estimator": self.estimator,
            "value": self.value,
            "stderr": self.stderr,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "level": self.level,
            "n_used": self.n_used,
        }


Cell = tuple[str, int]


class MeanTable:
    """Counterfactual means E[Y_i(a)] keyed by (rule label, position).

    ``replicates`` (B, n_cells) holds bootstrap draws aligned with ``cells``; when
    present, contrast uncertainty comes from the bootstrap joint distribution.
    Otherwise per-cell standard errors are combined in quadrature.
    """

    def __init__(
        self,
        values: Mapping,
        se: Mapping | None = None,
        replicates: np.ndarray | None = None,
        cells: list[Cell] | None = None,
        level: float = 0.95,
        estimator: str = "aipw",
        n_used: int = 0,
    ):
        self.values = {_key(k): float(v.value if isinstance(v, EffectEstimate) else v) for k, v in values.items()}
        if se is None:
            se = {k: v.stderr for k, v in values.items() if isinstance(v, EffectEstimate)}
        self.se = {_key(k): float(v) for k, v in se.items()}
        self.cells = [_key(c) for c in cells] if cells is not None else list(self.values)
        self.replicates = None if replicates is None else np.asarray(replicates, dtype=float)
        if self.replicates is not None and self.replicates.shape[1] != len(self.cells):
            raise InvalidArgumentError("replicates must have one column per cell")
        self.level = level
        self.estimator = estimator
        self.n_used = n_used
        ms = {len(r) for r, _ in self.values}
        if len(ms) > 1:
            raise InvalidArgumentError("all rules in a mean table must have the same length")
        self.m = ms.pop() if ms else 0

    @classmethod
    def from_frame(cls, df: pd.DataFrame, value: str = "psi", se: str | None = "se", **kw) -> "MeanTable":
        keys = [(str(r), int(i)) for r, i in zip(df["rule"], df["position"])]
        vals = dict(zip(keys, df[value]))
        ses = dict(zip(keys, df[se])) if se and se in df else None
        return cls(vals, ses, **kw)

    def __getitem__(self, key) -> float:
        k = _key(key)
        if k not in self.values:
            raise InvalidArgumentError(f"no counterfactual mean for rule {k[0]} at position {k[1]}")
        return self.values[k]

    def contrast(self, weights: Mapping, target: str) -> EffectEstimate:
        weights = {_key(k): w for k, w in weights.items() if w != 0}
        value = 0.0
        for k, w in weights.items():
            value += w * self[k]
        if not weights:
            value = 0.0
        z = norm.ppf(0.5 + self.level / 2.0)
        if self.replicates is not None:
            col = {c: j for j, c in enumerate(self.cells)}
            vec = np.zeros(len(self.cells))
            for k, w in weights.items():
                vec[col[k]] += w
            draws = self.replicates @ vec
            stderr = float(draws.std(ddof=1)) if len(draws) > 1 else 0.0
            tail = (1.0 - self.level) / 2.0
            lo, hi = np.quantile(draws, [tail, 1.0 - tail]) if len(draws) else (value, value)
            ci = (min(float(lo), value), max(float(hi), value))
        else:
            stderr = float(np.sqrt(sum((w * self.se.get(k, 0.0)) ** 2 for k, w in weights.items())))
            ci = (value - z * stderr, value + z * stderr)
        return EffectEstimate(value, stderr, ci, self.estimator, target, self.n_used, self.level)


def _key(k) -> Cell:
    rule, position = k
    return (as_rule(rule).label(), int(position))


def _means(means) -> MeanTable:
    return means if isinstance(means, MeanTable) else MeanTable(means)


def _compose(rest, position: int, block: int) -> AllocationRule:
    rest = as_rule(rest)
    bits = list(rest.bits)
    if not 1 <= position <= len(bits):
        raise InvalidArgumentError(f"position must be in 1..{len(bits)}")
    bits[position - 1] = int(block)
    try:
        return AllocationRule(tuple(bits))
    except InvalidArgumentError:
        raise InvalidArgumentError(
            f"composed rule {tuple(bits)} (ad {position} -> block {block} within {rest}) "
            "breaks position monotonicity"
        ) from None


def unit_effect(means, position: int, a_from: int, a_to: int, rest) -> EffectEstimate:
    """UE_i(a', a'', a) = E[Y_i(a', a_-i)] - E[Y_i(a'', a_-i)]."""
    t = _means(means)
    r1, r2 = _compose(rest, position, a_from), _compose(rest, position, a_to)
    return t.contrast(
        _merge({(r1, position): 1.0}, {(r2, position): -1.0}),
        f"UE{position}({a_from},{a_to},{as_rule(rest).label()})",
    )


def spillover_effect(means, position: int, block: int, rest_from, rest_to) -> EffectEstimate:
    """SE_i(a, a', a'') = E[Y_i(a, a'_-i)] - E[Y_i(a, a''_-i)]."""
    t = _means(means)
    r1, r2 = _compose(rest_from, position, block), _compose(rest_to, position, block)
    return t.contrast(
        _merge({(r1, position): 1.0}, {(r2, position): -1.0}),
        f"SE{position}({block},{as_rule(rest_from).label()},{as_rule(rest_to).label()})",
    )


def overall_effect(means, position: int, a, a_alt) -> EffectEstimate:
    """OE_i(a, a') = E[Y_i(a)] - E[Y_i(a')]."""
    t = _means(means)
    r1, r2 = as_rule(a), as_rule(a_alt)
    return t.contrast(
        _merge({(r1, position): 1.0}, {(r2, position): -1.0}),
        f"OE{position}({r1.label()},{r2.label()})",
    )


def average_overall_effect(means, a, a_alt) -> EffectEstimate:
    """AOE(a, a') = (1/m) sum_i OE_i(a, a')."""
    t = _means(means)
    r1, r2 = as_rule(a), as_rule(a_alt)
    if r1.m != r2.m:
        raise InvalidArgumentError("rules must have the same length")
    w: dict = {}
    for i in range(1, r1.m + 1):
        w = _merge(w, {(r1, i): 1.0 / r1.m}, {(r2, i): -1.0 / r1.m})
    return t.contrast(w, f"AOE({r1.label()},{r2.label()})")


def _merge(*parts) -> dict:
    out: dict = {}
    for part in parts:
        for k, w in part.items():
            key = _key(k)
            out[key] = out.get(key, 0.0) + w
    return out


@dataclass(frozen=True)
class Contrast:
    kind: str
    position: int | None
    estimate: EffectEstimate

    def as_row(self) -> dict:
        return {"kind": self.kind, "position": self.position if self.position else "", **self.estimate.as_dict()}


def enumerate_contrasts(means) -> list[Contrast]:
    """Every UE/SE/OE/AOE contrast reachable inside the valid-rule space.

    UE moves the ad Top -> Bottom (the reverse is the negation); SE and OE/AOE
    range over unordered pairs of rules in enumeration order.
    """
    t = _means(means)
    rules = enumerate_valid_rules(t.m)
    out: list[Contrast] = []
    for i in range(1, t.m + 1):
        for rest in rules:
            if rest.bits[i - 1] != 1:
                continue
            try:
                est = unit_effect(t, i, 1, 0, rest)
            except InvalidArgumentError:
                continue
            out.append(Contrast("UE", i, est))
        for x, r1 in enumerate(rules):
            for r2 in rules[x + 1 :]:
                if r1.bits[i - 1] == r2.bits[i - 1]:
                    out.append(Contrast("SE", i, spillover_effect(t, i, r1.bits[i - 1], r1, r2)))
        for x, r1 in enumerate(rules):
            for r2 in rules[x + 1 :]:
                out.append(Contrast("OE", i, overall_effect(t, i, r1, r2)))
    for x, r1 in enumerate(rules):
        for r2 in rules[x + 1 :]:
            out.append(Contrast("AOE", None, average_overall_effect(t, r1, r2)))
    return out
