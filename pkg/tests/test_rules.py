from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interference_lab.errors import InvalidArgumentError
from interference_lab.rules import (
    AllocationRule,
    block_features,
    enumerate_valid_rules,
    exhaustive_valid_rules,
    fci_column_names,
    fci_preprocess,
    is_valid,
    rule_index,
)
from interference_lab.sem import Dataset


def test_m3_rules_in_table_order():
    assert [r.bits for r in enumerate_valid_rules(3)] == [(1, 1, 1), (1, 1, 0), (1, 0, 0), (0, 0, 0)]


def test_m1_and_m4():
    assert [r.bits for r in enumerate_valid_rules(1)] == [(1,), (0,)]
    assert len(enumerate_valid_rules(4)) == 5


@pytest.mark.parametrize("m", range(1, 11))
def test_enumeration_matches_brute_force(m):
    fast = [r.bits for r in enumerate_valid_rules(m)]
    assert sorted(fast) == sorted(exhaustive_valid_rules(m))
    assert len(fast) == m + 1
    assert [sum(b) for b in fast] == sorted((sum(b) for b in fast), reverse=True)


def test_zero_ads_rejected():
    with pytest.raises(InvalidArgumentError):
        enumerate_valid_rules(0)


@pytest.mark.parametrize("bits,ok", [((1, 1, 1), True), ((0, 1, 1), False), ((1, 0, 1), False), ((0, 0, 0), True)])
def test_is_valid(bits, ok):
    assert is_valid(bits) is ok


def test_invalid_rule_message_names_the_problem():
    with pytest.raises(InvalidArgumentError, match="Bottom"):
        AllocationRule((0, 1, 1))


def test_parse_formats():
    for text in ("110", "1,1,0", "(1, 1, 0)"):
        assert AllocationRule.parse(text).bits == (1, 1, 0)
    with pytest.raises(InvalidArgumentError):
        AllocationRule.parse("1x0")


def test_rule_index_matches_enumeration():
    rules = enumerate_valid_rules(3)
    a = np.array([r.bits for r in rules])
    assert rule_index(a).tolist() == [0, 1, 2, 3]


def test_block_features_examples():
    x = np.arange(12, dtype=float).reshape(3, 4) + 1
    bf = block_features(x, (1, 1, 1), 2)
    assert np.array_equal(bf.xb, x) and not bf.xc.any()
    bf = block_features(x, (1, 0, 0), 1)
    assert bf.xb[0].any() and not bf.xb[1:].any()
    assert np.array_equal(bf.xc[1:], x[1:])
    bf = block_features(x, (1, 1, 0), 3)
    assert np.array_equal(np.flatnonzero(bf.xb.any(axis=1)), [2])
    assert np.array_equal(np.flatnonzero(bf.xc.any(axis=1)), [0, 1])


def test_block_features_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        block_features(np.zeros((2, 4)), (1, 1, 0), 1)


@settings(max_examples=200, deadline=None)
@given(
    m=st.integers(1, 6),
    p=st.integers(1, 4),
    data=st.data(),
)
def test_block_parts_partition_x(m, p, data):
    n_top = data.draw(st.integers(0, m))
    bits = tuple([1] * n_top + [0] * (m - n_top))
    i = data.draw(st.integers(1, m))
    x = np.array(data.draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=m * p, max_size=m * p))).reshape(m, p)
    bf = block_features(x, bits, i)
    assert np.array_equal(bf.xb + bf.xc, x)
    assert not (bf.xb * bf.xc).any()
    assert np.array_equal(bf.xb[i - 1], x[i - 1])


def _one(a, x=None):
    m = len(a)
    x = np.arange(1, m * 4 + 1, dtype=float).reshape(1, m, 4) if x is None else x
    return Dataset(ids=np.array([0]), x=x, a=np.array([a]), y=np.zeros((1, m), dtype=int))


def test_fci_single_block_row():
    d = _one((1, 1, 1))
    t = fci_preprocess(d, 1)
    d1 = t[[c for c in t.columns if c.startswith("d1_")]].to_numpy()
    d2 = t[[c for c in t.columns if c.startswith("d2_")]].to_numpy()
    assert not d1.any()
    assert np.array_equal(d2.reshape(3, 4), d.x[0])


def test_fci_split_row():
    d = _one((1, 0, 0))
    t = fci_preprocess(d, 1)
    d1 = t[[c for c in t.columns if c.startswith("d1_")]].to_numpy().reshape(3, 4)
    d2 = t[[c for c in t.columns if c.startswith("d2_")]].to_numpy().reshape(3, 4)
    assert np.flatnonzero(d1.any(axis=1)).tolist() == [1, 2]
    assert np.flatnonzero(d2.any(axis=1)).tolist() == [0]


def test_fci_keep_self_flag():
    d = _one((1, 1, 1))
    t = fci_preprocess(d, 2, keep_self_in_d1=True)
    assert t[[f"d1_x2_{k}" for k in range(1, 5)]].to_numpy().any()
    assert not t[[f"d1_x1_{k}" for k in range(1, 5)]].to_numpy().any()


def test_fci_column_count_and_names(small_golden):
    t = fci_preprocess(small_golden, 2)
    m, p = small_golden.m, small_golden.p
    assert t.shape == (small_golden.n, 2 * m * p + 1 + m)
    assert list(t.columns) == fci_column_names(m, p, 2)
    assert np.array_equal(t["y2"].to_numpy(), small_golden.y[:, 1])


def test_fci_preserves_row_order(small_golden):
    d = small_golden.subset(np.arange(50))
    rev = d.subset(np.arange(49, -1, -1))
    a = fci_preprocess(d, 3).to_numpy()
    b = fci_preprocess(rev, 3).to_numpy()
    assert np.array_equal(a[::-1], b)


def test_fci_empty_dataset_rejected(small_golden):
    with pytest.raises(InvalidArgumentError):
        fci_preprocess(small_golden.subset(np.arange(0)), 1)
