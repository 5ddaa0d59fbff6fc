"""Activation probabilities (BT, JI, LP) estimated from action logs."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import DirectedGraph

MEASURES = ("bt", "ji", "lp")


@dataclass(frozen=True)
class Action:
    action_id: str
    actor: str
    obj: str
    timestamp: float | None = None


@dataclass
class ActionLog:
    """Action records plus the per-node ``actions(x, *)`` / ``actions(*, x)`` sets."""

    records: list[Action]
    by_actor: dict[str, frozenset] = field(init=False, repr=False)
    by_object: dict[str, frozenset] = field(init=False, repr=False)

    def __post_init__(self):
        seen = set()
        by_actor = defaultdict(set)
        by_object = defaultdict(set)
        for r in self.records:
            key = (r.action_id, r.actor)
            if key in seen:
                raise ValueError(f"action {r.action_id!r} by {r.actor!r} appears twice")
            seen.add(key)
            by_actor[r.actor].add(r.action_id)
            by_object[r.obj].add(r.action_id)
        self.by_actor = {k: frozenset(v) for k, v in by_actor.items()}
        self.by_object = {k: frozenset(v) for k, v in by_object.items()}

    def actions_by(self, x: str) -> frozenset:
        return self.by_actor.get(x, frozenset())

    def actions_on(self, x: str) -> frozenset:
        return self.by_object.get(x, frozenset())

    def nodes(self) -> list[str]:
        """Node labels in first-appearance order (actor before object)."""
        out = {}
        for r in self.records:
            out.setdefault(r.actor, None)
            out.setdefault(r.obj, None)
        return list(out)

    @property
    def has_timestamps(self) -> bool:
        return bool(self.records) and all(r.timestamp is not None for r in self.records)

    def split(self, fraction: float = 0.5) -> tuple["ActionLog", "ActionLog"]:
        """Split into an early and a late period.

        With timestamps the cut is at ``t_min + fraction * (t_max - t_min)``
        (inclusive on the early side).  Otherwise the distinct action ids are
        sorted (numerically when they all parse as integers) and the first
        ``fraction`` of them go to the early part.
        """
        if not 0.0 < fraction < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if self.has_timestamps:
            ts = [r.timestamp for r in self.records]
            cut = min(ts) + fraction * (max(ts) - min(ts))
            early = [r for r in self.records if r.timestamp <= cut]
            late = [r for r in self.records if r.timestamp > cut]
        else:
            ids = sorted({r.action_id for r in self.records}, key=_action_sort_key)
            first = set(ids[:int(round(fraction * len(ids)))])
            early = [r for r in self.records if r.action_id in first]
            late = [r for r in self.records if r.action_id not in first]
        return ActionLog(early), ActionLog(late)


def _action_sort_key(a: str):
    try:
        return (0, int(a), "")
    except ValueError:
        return (1, 0, a)


def read_action_log(path) -> ActionLog:
    """Read ``action_id<TAB>actor<TAB>object[<TAB>timestamp]`` records."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise ValueError(f"line {lineno}: expected 3 or 4 tab-separated fields")
            ts = float(parts[3]) if len(parts) == 4 else None
            records.append(Action(parts[0], parts[1], parts[2], ts))
    return ActionLog(records)


def bt_prob(log: ActionLog, u: str, v: str) -> float:
    den = log.actions_by(u)
    if not den:
        return 0.0
    return len(den & log.actions_by(v)) / len(den)


def ji_prob(log: ActionLog, u: str, v: str) -> float:
    a, b = log.actions_by(u), log.actions_on(v)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def lp_prob(log: ActionLog, u: str, v: str) -> float:
    den = log.actions_on(v)
    if not den:
        return 0.0
    return len(log.actions_by(u) & den) / len(den)


_FORMULAS = {"bt": bt_prob, "ji": ji_prob, "lp": lp_prob}


def default_topology(log: ActionLog, measure: str) -> list[tuple[str, str]]:
    """Pairs ``(u, v)`` whose numerator set for ``measure`` is nonempty."""
    pairs = set()
    if measure == "bt":
        # u, v share an action
        holders = defaultdict(list)
        for x, acts in log.by_actor.items():
            for a in acts:
                holders[a].append(x)
        for xs in holders.values():
            for u in xs:
                for v in xs:
                    if u != v:
                        pairs.add((u, v))
    else:
        # u did an action whose object is v
        for r in log.records:
            if r.actor != r.obj:
                pairs.add((r.actor, r.obj))
    order = {x: i for i, x in enumerate(log.nodes())}
    return sorted(pairs, key=lambda p: (order[p[0]], order[p[1]]))


def build_probs(log: ActionLog, measure: str,
                topology: Iterable[Sequence[str]] | None = None,
                nodes: Sequence[str] | None = None) -> DirectedGraph:
    """Weight each topology edge with the requested estimator.

    ``nodes`` fixes the label order (defaults to the log's first-appearance
    order extended by any topology endpoint not in the log).
    """
    if measure not in _FORMULAS:
        raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")
    fn = _FORMULAS[measure]
    topo = list(default_topology(log, measure) if topology is None else topology)
    labels = list(nodes) if nodes is not None else log.nodes()
    index = {x: i for i, x in enumerate(labels)}
    for u, v in topo:
        for x in (u, v):
            if x not in index:
                index[x] = len(labels)
                labels.append(x)
    src = np.array([index[u] for u, _ in topo], dtype=np.int64)
    dst = np.array([index[v] for _, v in topo], dtype=np.int64)
    prob = np.array([fn(log, u, v) for u, v in topo], dtype=np.float64)
    return DirectedGraph(max(1, len(labels)), src, dst, prob, tuple(labels) or ("0",))


def build_bt(log, topology=None, nodes=None) -> DirectedGraph:
    return build_probs(log, "bt", topology, nodes)


def build_ji(log, topology=None, nodes=None) -> DirectedGraph:
    return build_probs(log, "ji", topology, nodes)


def build_lp(log, topology=None, nodes=None) -> DirectedGraph:
    return build_probs(log, "lp", topology, nodes)


def mean_edge_probability(g: DirectedGraph) -> float:
    return float(g.prob.mean()) if g.edge_count else 0.0
