"""Causal DAGs for a pageview, single-world intervention graphs and d-separation."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from interference_lab.errors import InvalidArgumentError
from interference_lab.rules import AllocationRule, as_rule

ROLES = ("latent", "feature", "treatment", "outcome", "fixed")


@dataclass(frozen=True)
class Node:
    label: str
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidArgumentError(f"unknown role {self.role!r} for node {self.label!r}")


class Dag:
    """Immutable labeled DAG. Cycles, dangling edges and duplicate labels are rejected."""

    def __init__(self, nodes: Iterable[Node], edges: Iterable[tuple[str, str]]):
        nodes = tuple(nodes)
        labels = [n.label for n in nodes]
        if len(set(labels)) != len(labels):
            dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
            raise InvalidArgumentError(f"duplicate node labels: {dupes}")
        self._nodes = {n.label: n for n in nodes}
        self._order = tuple(labels)
        edges = tuple(dict.fromkeys((str(u), str(v)) for u, v in edges))
        for u, v in edges:
            if u not in self._nodes or v not in self._nodes:
                raise InvalidArgumentError(f"edge {u}->{v} references a missing node")
            if u == v:
                raise InvalidArgumentError(f"self-loop on {u}")
        self._edges = edges
        self._parents: dict[str, tuple[str, ...]] = {lab: () for lab in labels}
        self._children: dict[str, tuple[str, ...]] = {lab: () for lab in labels}
        for u, v in edges:
            self._parents[v] += (u,)
            self._children[u] += (v,)
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        indeg = {lab: len(ps) for lab, ps in self._parents.items()}
        queue = deque(lab for lab in self._order if indeg[lab] == 0)
        seen = 0
        while queue:
            u = queue.popleft()
            seen += 1
            for v in self._children[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    queue.append(v)
        if seen != len(self._order):
            cyclic = sorted(lab for lab, d in indeg.items() if d > 0)
            raise InvalidArgumentError(f"graph has a directed cycle through {cyclic}")

    @property
    def labels(self) -> tuple[str, ...]:
        return self._order

    @property
    def nodes(self) -> tuple[Node, ...]:
        return tuple(self._nodes[lab] for lab in self._order)

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return self._edges

    def node(self, label: str) -> Node:
        try:
            return self._nodes[label]
        except KeyError:
            raise InvalidArgumentError(f"no node labeled {label!r}") from None

    def role(self, label: str) -> str:
        return self.node(label).role

    def __contains__(self, label) -> bool:
        return label in self._nodes

    def parents(self, label: str) -> set[str]:
        self.node(label)
        return set(self._parents[label])

    def children(self, label: str) -> set[str]:
        self.node(label)
        return set(self._children[label])

    def in_degree(self, label: str) -> int:
        return len(self._parents[label])

    def out_degree(self, label: str) -> int:
        return len(self._children[label])

    def descendants(self, label: str) -> set[str]:
        out, stack = set(), [label]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in out:
                    out.add(c)
                    stack.append(c)
        return out

    def ancestors_of(self, labels: Iterable[str]) -> set[str]:
        """Ancestors of a set, including the set itself."""
        out = set(labels)
        stack = list(out)
        while stack:
            for p in self._parents[stack.pop()]:
                if p not in out:
                    out.add(p)
                    stack.append(p)
        return out

    def with_edges(self, extra: Iterable[tuple[str, str]]) -> "Dag":
        return Dag(self.nodes, self._edges + tuple(extra))

    def to_dict(self) -> dict:
        return {
            "nodes": [{"label": n.label, "role": n.role} for n in self.nodes],
            "edges": [[u, v] for u, v in self._edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Dag":
        try:
            nodes = [Node(n["label"], n["role"]) for n in doc["nodes"]]
            edges = [(e[0], e[1]) for e in doc["edges"]]
        except (KeyError, IndexError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed graph document: {exc}") from exc
        return cls(nodes, edges)

    @classmethod
    def from_json(cls, text: str) -> "Dag":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dag)
            and set(self.nodes) == set(other.nodes)
            and set(self._edges) == set(other._edges)
        )

    def __hash__(self):
        return hash((frozenset(self.nodes), frozenset(self._edges)))

    def __repr__(self) -> str:
        return f"Dag({len(self._order)} nodes, {len(self._edges)} edges)"


def build_ad_dag(m: int) -> Dag:
    """The pageview graph over U, C, X1..Xm, A1..Am, Y1..Ym.

    Every outcome is included and no outcome causes another.
    """
    if m < 1:
        raise InvalidArgumentError(f"need m >= 1 ads, got {m}")
    idx = range(1, m + 1)
    nodes = [Node("U", "latent"), Node("C", "latent")]
    nodes += [Node(f"X{i}", "feature") for i in idx]
    nodes += [Node(f"A{i}", "treatment") for i in idx]
    nodes += [Node(f"Y{i}", "outcome") for i in idx]
    edges = [("U", "C")]
    edges += [("C", f"X{i}") for i in idx]
    edges += [(f"X{j}", f"A{i}") for i in idx for j in idx]
    edges += [(f"X{j}", f"Y{i}") for i in idx for j in idx]
    edges += [(f"A{j}", f"Y{i}") for i in idx for j in idx]
    edges += [("U", f"Y{i}") for i in idx]
    return Dag(nodes, edges)


@dataclass(frozen=True)
class Swig:
    """A DAG after node-splitting.

    ``splits`` maps each split treatment (random half, keeps incoming edges) to its
    fixed half (keeps outgoing edges); ``intervention`` records the fixed values and
    ``relabel`` maps original descendant labels to their counterfactual labels.
    """

    dag: Dag
    splits: Mapping[str, str] = field(default_factory=dict)
    intervention: Mapping[str, int] = field(default_factory=dict)
    relabel: Mapping[str, str] = field(default_factory=dict)

    def counterfactual(self, label: str) -> str:
        return self.relabel.get(label, label)


def _fixed_label(treatment: str) -> str:
    return treatment[0].lower() + treatment[1:]


def swig_transform(g: Dag | Swig, intervention) -> Swig:
    """Split every intervened treatment into a random half and a fixed half.

    ``intervention`` is either an AllocationRule (intervene on A1..Am) or a mapping
    from treatment label to value. Descendants of the fixed halves are relabeled
    with the intervention, e.g. ``Y2(a1=1,a2=1,a3=0)``.
    """
    prior = g if isinstance(g, Swig) else None
    base = g.dag if prior else g
    if isinstance(intervention, (AllocationRule, tuple, list)):
        rule = as_rule(intervention)
        intervention = {f"A{i}": b for i, b in enumerate(rule.bits, start=1)}
    intervention = dict(intervention)
    for label, value in intervention.items():
        if label not in base:
            raise InvalidArgumentError(f"cannot intervene on {label!r}: not in the graph")
        if prior and label in prior.splits:
            raise InvalidArgumentError(f"{label} has already been split")
        if base.role(label) != "treatment":
            raise InvalidArgumentError(
                f"cannot intervene on {label!r}: role is {base.role(label)!r}, not treatment"
            )
        if value not in (0, 1):
            raise InvalidArgumentError(f"intervention value for {label} must be 0 or 1")
    if not intervention:
        return prior if prior else Swig(base)

    fixed = {t: _fixed_label(t) for t in intervention}
    for t, f in fixed.items():
        if f in base:
            raise InvalidArgumentError(f"fixed-node label {f!r} collides with an existing node")

    all_values = dict(prior.intervention) if prior else {}
    all_values.update(intervention)
    affected: set[str] = set()
    for t in intervention:
        affected |= base.descendants(t)
    if prior:
        affected |= set(prior.relabel)
    tag = ",".join(f"{_fixed_label(t)}={v}" for t, v in sorted(all_values.items(), key=_natural))
    original = {v: k for k, v in prior.relabel.items()} if prior else {}

    def new_label(lab: str) -> str:
        root = original.get(lab, lab)
        return f"{root}({tag})" if root in affected else lab

    nodes = [Node(new_label(n.label), n.role) for n in base.nodes]
    nodes += [Node(fixed[t], "fixed") for t in intervention]
    edges = []
    for u, v in base.edges:
        src = fixed[u] if u in fixed else u
        edges.append((new_label(src), new_label(v)))
    relabel = {original.get(lab, lab): new_label(lab) for lab in base.labels if new_label(lab) != lab}
    splits = dict(prior.splits) if prior else {}
    splits.update(fixed)
    return Swig(Dag(nodes, edges), splits=splits, intervention=all_values, relabel=relabel)


def _natural(item):
    label = item[0]
    digits = "".join(ch for ch in label if ch.isdigit())
    return (label.rstrip("0123456789"), int(digits) if digits else 0)


def _as_set(g: Dag, name: str, labels) -> set[str]:
    labels = {labels} if isinstance(labels, str) else set(labels)
    for lab in labels:
        if lab not in g:
            raise InvalidArgumentError(f"{name} contains unknown node {lab!r}")
    return labels


def d_separated(g: Dag | Swig, x, y, z=(), allow_latent: bool = False) -> bool:
    """Decide X _||_ Y | Z by a reachability sweep over (node, direction) states.

    Latent-tagged nodes may not be conditioned on unless ``allow_latent``.
    """
    dag = g.dag if isinstance(g, Swig) else g
    xs, ys, zs = _as_set(dag, "X", x), _as_set(dag, "Y", y), _as_set(dag, "Z", z)
    if not xs or not ys:
        raise InvalidArgumentError("X and Y must be nonempty")
    if xs & ys or xs & zs or ys & zs:
        raise InvalidArgumentError("X, Y and Z must be pairwise disjoint")
    if not allow_latent:
        latent = sorted(lab for lab in zs if dag.role(lab) == "latent")
        if latent:
            raise InvalidArgumentError(f"conditioning on latent nodes {latent} is not allowed")
    return not (reachable(dag, xs, zs) & ys)


def reachable(dag: Dag, sources: set[str], z: set[str]) -> set[str]:
    """Nodes d-connected to ``sources`` given ``z``."""
    anc_z = dag.ancestors_of(z)
    # "up": arrived from a child (travelling against edges), "down": arrived from a parent
    queue = deque((s, "up") for s in sources)
    visited: set[tuple[str, str]] = set()
    found: set[str] = set()
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node not in z:
            found.add(node)
        if direction == "up" and node not in z:
            for p in dag._parents[node]:
                queue.append((p, "up"))
            for c in dag._children[node]:
                queue.append((c, "down"))
        elif direction == "down":
            if node not in z:
                for c in dag._children[node]:
                    queue.append((c, "down"))
            if node in anc_z:
                for p in dag._parents[node]:
                    queue.append((p, "up"))
    return found - sources


def verify_network_ignorability(
    m: int, a, extra_edges: Iterable[tuple[str, str]] = ()
) -> bool:
    """Check Y_i(a) _||_ {A_1..A_m} | {X_1..X_m} in the SWIG, for every position i."""
    rule = as_rule(a)
    if rule.m != m:
        raise InvalidArgumentError(f"rule {rule} has length {rule.m}, expected {m}")
    g = build_ad_dag(m)
    extra = tuple(extra_edges)
    if extra:
        g = g.with_edges(extra)
    swig = swig_transform(g, rule)
    treatments = {f"A{i}" for i in range(1, m + 1)}
    features = {f"X{i}" for i in range(1, m + 1)}
    return all(
        d_separated(swig, {swig.counterfactual(f"Y{i}")}, treatments, features)
        for i in range(1, m + 1)
    )
