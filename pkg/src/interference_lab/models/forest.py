"""Bagged classification trees with per-split feature subsampling.

Each tree is grown breadth-first on histogram-binned features (quantile bin
edges, Gini impurity). Bootstrap resampling uses Poisson(1) row weights drawn
from a hash of each row's content (numbered among exact duplicates), the
forest seed and the tree index, so the fitted forest does not depend on the
order of training rows. All split
statistics are sums of integer weights and are therefore computed exactly.
"""

from __future__ import annotations

import math

import numpy as np

from interference_lab.errors import InvalidArgumentError, NumericalError

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_POISSON_CDF = np.cumsum([math.exp(-1.0) / math.factorial(k) for k in range(20)])


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLD
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def row_hashes(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    bits = np.ascontiguousarray(np.column_stack([X, y]).astype(np.float64) + 0.0).view(np.uint64)
    h = np.zeros(len(bits), dtype=np.uint64)
    for c in range(bits.shape[1]):
        h = _mix(h ^ bits[:, c])
    # identical rows would otherwise share one weight; number them within their group
    # (which duplicate gets which number cannot matter, so order invariance is kept)
    order = np.argsort(h, kind="stable")
    hs = h[order]
    starts = np.r_[0, np.flatnonzero(hs[1:] != hs[:-1]) + 1]
    occ = np.arange(len(h)) - np.repeat(starts, np.diff(np.r_[starts, len(h)]))
    out = np.empty_like(h)
    out[order] = _mix(hs ^ _mix(occ.astype(np.uint64)))
    return out


def poisson_weights(hashes: np.ndarray, seed: int, tree: int) -> np.ndarray:
    key = _mix(np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64) ^ _mix(np.array([tree], dtype=np.uint64)))
    u = (_mix(hashes ^ key[0]) >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    return np.searchsorted(_POISSON_CDF, u, side="right").astype(np.float64)


def bin_edges(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    qs = np.arange(1, n_bins) / n_bins
    return [np.unique(np.quantile(X[:, f], qs)) for f in range(X.shape[1])]


class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for k in range(len(self.feature)):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            idx = node[active]
            f = self.feature[idx]
            go_left = X[rows[active], f] < self.threshold[idx]
            node[active] = np.where(go_left, self.left[idx], self.right[idx])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "Tree":
        return cls(doc["feature"], doc["threshold"], doc["left"], doc["right"], doc["value"])


def grow_tree(
    B: np.ndarray,
    edges: list[np.ndarray],
    Y: np.ndarray,
    w: np.ndarray,
    max_depth: int,
    mtry: int,
    min_leaf: float,
    rng: np.random.Generator,
) -> Tree:
    """Grow one tree on binned features ``B`` (int bins), one-hot labels ``Y`` and row weights ``w``."""
    keep = np.flatnonzero(w > 0)
    BT = np.ascontiguousarray(B[keep].T).astype(np.int64)
    Y, w = Y[keep], w[keep]
    d, n = BT.shape
    K = Y.shape[1]
    nb = max(1, max((len(e) for e in edges), default=0) + 1)
    WY = Y * w[:, None]
    # class-0 sums are recovered from the totals, so only K-1 histograms are needed
    wcols = [w] + [WY[:, k] for k in range(1, K)]

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [None]
    tot = WY.sum(axis=0)
    value[0] = tot / max(tot.sum(), 1e-300)
    node_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    for _depth in range(max_depth):
        if not frontier or n == 0:
            break
        f_count = len(frontier)
        slot = np.full(len(feature), -1, dtype=np.int64)
        slot[frontier] = np.arange(f_count)
        row_slot = slot[node_of]
        live = np.flatnonzero(row_slot >= 0)
        all_live = len(live) == n
        base = (row_slot if all_live else row_slot[live]) * nb
        cols = wcols if all_live else [c[live] for c in wcols]
        allowed = np.zeros((f_count, d), dtype=bool)
        for s in range(f_count):
            allowed[s, rng.choice(d, size=mtry, replace=False)] = True
        best_gain = np.full(f_count, 0.0)
        best_feat = np.full(f_count, -1)
        best_bin = np.zeros(f_count, dtype=np.int64)
        for f in np.flatnonzero(allowed.any(axis=0)):
            if len(edges[f]) == 0:
                continue
            key = base + (BT[f] if all_live else BT[f, live])
            hw, *hk = [np.bincount(key, weights=c, minlength=f_count * nb).reshape(f_count, nb) for c in cols]
            hist = np.stack([hw - sum(hk)] + hk, axis=-1) if K > 1 else hw[..., None]
            cum = np.cumsum(hist, axis=1)[:, :-1, :]  # left stats for split "bin <= b"
            total = hist.sum(axis=1)
            wl = cum.sum(axis=2)
            wt = total.sum(axis=1)
            wr = wt[:, None] - wl
            right_s = total[:, None, :] - cum
            with np.errstate(divide="ignore", invalid="ignore"):
                score = (cum**2).sum(axis=2) / wl + (right_s**2).sum(axis=2) / wr
                parent = (total**2).sum(axis=1) / wt
                gain = score - parent[:, None]
            valid = (wl >= min_leaf) & (wr >= min_leaf) & allowed[:, [f]]
            valid[:, len(edges[f]) :] = False
            gain = np.where(valid, gain, -np.inf)
            b = np.argmax(gain, axis=1)
            g = gain[np.arange(f_count), b]
            better = g > best_gain + 1e-9
            best_gain = np.where(better, g, best_gain)
            best_feat = np.where(better, f, best_feat)
            best_bin = np.where(better, b, best_bin)
        new_frontier = []
        split_nodes = {}
        for s, nid in enumerate(frontier):
            if best_feat[s] < 0:
                continue
            f, b = int(best_feat[s]), int(best_bin[s])
            lid, rid = len(feature), len(feature) + 1
            feature[nid], threshold[nid], left[nid], right[nid] = f, float(edges[f][b]), lid, rid
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            value += [None, None]
            split_nodes[nid] = (f, b, lid, rid)
            new_frontier += [lid, rid]
        if not split_nodes:
            break
        s_feat = np.full(len(feature), -1, dtype=np.int64)
        s_bin = np.zeros(len(feature), dtype=np.int64)
        s_left = np.zeros(len(feature), dtype=np.int64)
        for nid, (f, b, lid, rid) in split_nodes.items():
            s_feat[nid], s_bin[nid], s_left[nid] = f, b, lid
        moving = np.flatnonzero(s_feat[node_of] >= 0)
        nodes = node_of[moving]
        goes_right = BT[s_feat[nodes], moving] > s_bin[nodes]
        node_of[moving] = s_left[nodes] + goes_right
        sums = np.column_stack(
            [np.bincount(node_of, weights=WY[:, k], minlength=len(feature)) for k in range(K)]
        )
        for nid in new_frontier:
            value[nid] = sums[nid] / max(sums[nid].sum(), 1e-300)
        frontier = new_frontier
    return Tree(feature, threshold, left, right, np.array(value))


class RandomForest:
    """Multiclass probability forest; binary classification is the K=2 case."""

    def __init__(
        self,
        n_trees: int = 200,
        max_depth: int = 6,
        max_features: int | str = "sqrt",
        min_leaf: float = 5.0,
        n_bins: int = 64,
        seed: int = 0,
        n_jobs: int = 1,
    ):
        if n_trees < 1:
            raise InvalidArgumentError("need at least one tree")
        if max_depth < 0:
            raise InvalidArgumentError("max_depth must be >= 0")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.n_bins = n_bins
        self.seed = seed
        self.n_jobs = n_jobs
        self.trees: list[Tree] = []
        self.n_classes = 0
        self.n_features = 0

    def _mtry(self, d: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(math.floor(math.sqrt(d))))
        return max(1, min(d, int(self.max_features)))

    def fit(self, X, y, n_classes: int | None = None) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(int)
        if X.ndim != 2 or len(X) != len(y):
            raise InvalidArgumentError("X must be (n, d) with one label per row")
        K = int(n_classes or (y.max() + 1))
        self.n_classes, self.n_features = K, X.shape[1]
        edges = bin_edges(X, self.n_bins)
        B = np.column_stack([np.searchsorted(e, X[:, f], side="right") for f, e in enumerate(edges)])
        Y = np.zeros((len(y), K))
        Y[np.arange(len(y)), y] = 1.0
        hashes = row_hashes(X, y)
        mtry = self._mtry(X.shape[1])

        def one(t):
            w = poisson_weights(hashes, self.seed, t)
            rng = np.random.default_rng([self.seed, t])
            return grow_tree(B, edges, Y, w, self.max_depth, mtry, self.min_leaf, rng)

        if self.n_jobs == 1:
            self.trees = [one(t) for t in range(self.n_trees)]
        else:
            from joblib import Parallel, delayed

            self.trees = Parallel(n_jobs=self.n_jobs)(delayed(one)(t) for t in range(self.n_trees))
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not self.trees:
            raise NumericalError("forest is not fitted")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features:
            raise InvalidArgumentError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros((len(X), self.n_classes))
        for tree in self.trees:
            out += tree.predict(X)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "max_features": self.max_features,
            "min_leaf": self.min_leaf,
            "n_bins": self.n_bins,
            "seed": self.seed,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc) -> "RandomForest":
        forest = cls(
            n_trees=doc["n_trees"],
            max_depth=doc["max_depth"],
            max_features=doc["max_features"],
            min_leaf=doc["min_leaf"],
            n_bins=doc["n_bins"],
            seed=doc["seed"],
        )
        forest.n_classes, forest.n_features = doc["n_classes"], doc["n_features"]
        forest.trees = [Tree.from_dict(t) for t in doc["trees"]]
        return forest
