"""Allocation rules, block/cross-block feature masks and the discovery preprocessing table.

Positions are 1-based throughout the public API (position 1 is the first ad on
the page). Bit value 1 means the ad sits in the Top block, 0 the Bottom block.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from interference_lab.errors import InvalidArgumentError

TOP = 1
BOTTOM = 0


def is_valid(bits: Iterable[int]) -> bool:
    """True iff ``bits`` is a non-empty 0/1 vector that never goes Bottom -> Top."""
    bits = tuple(bits)
    if not bits or any(b not in (0, 1) for b in bits):
        return False
    return all(bits[k] >= bits[k + 1] for k in range(len(bits) - 1))


@dataclass(frozen=True, order=True)
class AllocationRule:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        object.__setattr__(self, "bits", bits)
        if not is_valid(bits):
            raise InvalidArgumentError(
                f"allocation rule {bits} is invalid: rules must be 0/1 and position-monotone "
                "(an ad in the Bottom block cannot precede an ad in the Top block)"
            )

    @classmethod
    def parse(cls, text: str) -> "AllocationRule":
        """Parse ``"110"``, ``"1,1,0"`` or ``"(1, 1, 0)"``."""
        cleaned = text.strip().strip("()[]").replace(" ", "")
        parts = cleaned.split(",") if "," in cleaned else list(cleaned)
        try:
            bits = tuple(int(p) for p in parts if p != "")
        except ValueError as exc:
            raise InvalidArgumentError(f"cannot parse allocation rule {text!r}") from exc
        return cls(bits)

    @property
    def m(self) -> int:
        return len(self.bits)

    @property
    def n_top(self) -> int:
        return sum(self.bits)

    def label(self) -> str:
        return "".join(str(b) for b in self.bits)

    def with_position(self, position: int, block: int) -> "AllocationRule":
        """Copy with the ad at ``position`` moved to ``block``; raises if the result is invalid."""
        _check_position(position, self.m)
        bits = list(self.bits)
        bits[position - 1] = int(block)
        return AllocationRule(tuple(bits))

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, k):
        return self.bits[k]

    def __str__(self) -> str:
        return "(" + ", ".join(str(b) for b in self.bits) + ")"


def as_rule(a) -> AllocationRule:
    if isinstance(a, AllocationRule):
        return a
    if isinstance(a, str):
        return AllocationRule.parse(a)
    return AllocationRule(tuple(a))


def enumerate_valid_rules(m: int) -> list[AllocationRule]:
    """All m+1 monotone rules, most Top ads first: (1,..,1), (1,..,1,0), ..., (0,..,0)."""
    if m < 1:
        raise InvalidArgumentError(f"need at least one ad per pageview, got m={m}")
    return [AllocationRule((1,) * k + (0,) * (m - k)) for k in range(m, -1, -1)]


def rule_index(a: np.ndarray) -> np.ndarray:
    """Map (N, m) arrays of valid bit rows to their index in ``enumerate_valid_rules``.

    For a monotone rule the index is simply ``m - n_top``.
    """
    a = np.asarray(a)
    if a.ndim != 2:
        raise InvalidArgumentError("expected an (N, m) allocation array")
    if a.shape[1] > 1 and np.any(a[:, 1:] > a[:, :-1]):
        bad = int(np.argmax(np.any(a[:, 1:] > a[:, :-1], axis=1)))
        raise InvalidArgumentError(f"row {bad} has invalid allocation {tuple(int(v) for v in a[bad])}")
    return a.shape[1] - a.sum(axis=1).astype(int)


def _check_position(position: int, m: int) -> None:
    if not 1 <= position <= m:
        raise InvalidArgumentError(f"position must be in 1..{m}, got {position}")


@dataclass(frozen=True)
class BlockFeatures:
    xb: np.ndarray
    xc: np.ndarray


def block_features(x, a, position: int) -> BlockFeatures:
    """Split one pageview's (m, p) feature matrix into same-block and cross-block parts.

    Row j of ``xb`` is X_j when ad j shares the block of ad ``position`` and zero
    otherwise; ``xc`` holds the complementary rows. The target ad always lands in ``xb``.
    """
    x = np.asarray(x, dtype=float)
    rule = as_rule(a)
    if x.ndim != 2 or x.shape[0] != rule.m:
        raise InvalidArgumentError(
            f"feature matrix has shape {x.shape}, expected ({rule.m}, p) for rule {rule}"
        )
    _check_position(position, rule.m)
    bits = np.asarray(rule.bits)
    same = (bits == bits[position - 1])[:, None]
    return BlockFeatures(xb=np.where(same, x, 0.0), xc=np.where(same, 0.0, x))


def same_block_mask(a: np.ndarray, position: int) -> np.ndarray:
    """(N, m) boolean: does ad j share the block of ad ``position`` on each pageview."""
    a = np.asarray(a)
    return a == a[:, [position - 1]]


def fci_column_names(m: int, p: int, position: int) -> list[str]:
    d1 = [f"d1_x{j}_{k}" for j in range(1, m + 1) for k in range(1, p + 1)]
    d2 = [f"d2_x{j}_{k}" for j in range(1, m + 1) for k in range(1, p + 1)]
    alloc = [f"a{j}" for j in range(1, m + 1)]
    return d1 + d2 + alloc + [f"y{position}"]


def fci_preprocess(
    dataset,
    position: int,
    keep_self_in_d1: bool = False,
    x: np.ndarray | None = None,
    a: np.ndarray | None = None,
) -> pd.DataFrame:
    """Build the augmented discovery table for the outcome at ``position``.

    D1 zeroes X_j whenever A_j equals the target's block, for every j including
    the target itself (so the target's own D1 columns are identically zero unless
    ``keep_self_in_d1``). D2 zeroes X_j whenever A_j differs from the target's
    block, for j other than the target, so the target's own features always
    survive in D2. D1 therefore carries cross-block information and D2 the
    block-level information.

    ``x``/``a`` override the dataset arrays, which is how counterfactual
    allocations are featurized.
    """
    x = dataset.x if x is None else np.asarray(x, dtype=float)
    a = dataset.a if a is None else np.asarray(a)
    n, m, p = x.shape
    if n == 0:
        raise InvalidArgumentError("fci_preprocess needs a nonempty dataset")
    _check_position(position, m)
    same = same_block_mask(a, position)
    d1_keep = ~same
    d2_keep = same.copy()
    d2_keep[:, position - 1] = True
    if keep_self_in_d1:
        d1_keep = d1_keep.copy()
        d1_keep[:, position - 1] = True
    d1 = np.where(d1_keep[:, :, None], x, 0.0).reshape(n, m * p)
    d2 = np.where(d2_keep[:, :, None], x, 0.0).reshape(n, m * p)
    y = dataset.y[:, position - 1].astype(float) if dataset is not None else np.zeros(n)
    values = np.column_stack([d1, d2, a.astype(float), y])
    return pd.DataFrame(values, columns=fci_column_names(m, p, position))


def exhaustive_valid_rules(m: int) -> list[tuple[int, ...]]:
    """Brute-force filter of all 2^m bit vectors; the cross-check for ``enumerate_valid_rules``."""
    return [bits for bits in itertools.product((0, 1), repeat=m) if is_valid(bits)]


def rules_from_labels(labels: Sequence[str]) -> list[AllocationRule]:
    return [as_rule(s) for s in labels]
