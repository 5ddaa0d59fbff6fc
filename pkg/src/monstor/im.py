"""Greedy and lazy-greedy seed selection over pluggable influence functions."""
from __future__ import annotations

import heapq
from typing import Iterable, Sequence

import numpy as np

from .cascade import exact_influence, simulate
from .graph import DirectedGraph
from .model import ModelParams, stacked_influences


class InfluenceFunction:
    """Set function ``S -> expected spread`` on a fixed graph.

    ``calls`` counts evaluated nonempty sets; ``f(empty) == 0`` is free.
    """

    backend = "abstract"

    def __init__(self, g: DirectedGraph):
        self.g = g
        self.calls = 0

    def _eval(self, seeds: Sequence[int]) -> float:
        raise NotImplementedError

    def _eval_many(self, sets: Sequence[Sequence[int]]) -> list[float]:
        return [self._eval(s) for s in sets]

    def __call__(self, seeds: Iterable[int]) -> float:
        s = sorted(set(int(x) for x in seeds))
        if not s:
            return 0.0
        self.calls += 1
        return float(self._eval(s))

    def many(self, sets: Iterable[Iterable[int]]) -> list[float]:
        sets = [sorted(set(int(x) for x in s)) for s in sets]
        out = [0.0] * len(sets)
        idx = [i for i, s in enumerate(sets) if s]
        if idx:
            self.calls += len(idx)
            for i, v in zip(idx, self._eval_many([sets[i] for i in idx])):
                out[i] = float(v)
        return out

    def describe(self) -> str:
        return self.backend


class MCInfluence(InfluenceFunction):
    """Monte Carlo spread with a fixed master seed.

    Every call reuses the same per-run coin streams, so each run is a fixed
    live-edge sample and the estimate is itself monotone and submodular.
    """

    backend = "mc"

    def __init__(self, g, runs=10_000, seed=0, workers=1):
        super().__init__(g)
        self.runs, self.seed, self.workers = int(runs), int(seed), int(workers)

    def _eval(self, seeds):
        return simulate(self.g, seeds, self.runs, self.seed, self.workers).influence

    def describe(self):
        return f"mc(runs={self.runs},seed={self.seed})"


class ExactInfluence(InfluenceFunction):
    backend = "exact"

    def __init__(self, g):
        super().__init__(g)
        self._cache: dict[tuple[int, ...], float] = {}

    def _eval(self, seeds):
        key = tuple(seeds)
        if key not in self._cache:
            self._cache[key] = exact_influence(self.g, seeds)[1]
        return self._cache[key]


class SurrogateInfluence(InfluenceFunction):
    backend = "surrogate"

    def __init__(self, g, model: ModelParams, s: int | None = None, batch: int = 64):
        super().__init__(g)
        self.model = model
        self.s = model.s if s is None else int(s)
        self.batch = batch

    def _eval(self, seeds):
        return self._eval_many([seeds])[0]

    def _eval_many(self, sets):
        out = []
        for k in range(0, len(sets), self.batch):
            out.extend(stacked_influences(self.g, sets[k:k + self.batch], self.model, [self.s])[self.s])
        return out

    def describe(self):
        return f"surrogate(s={self.s})"


class FunctionInfluence(InfluenceFunction):
    """Wrap a plain callable (for tests and modular baselines)."""

    backend = "function"

    def __init__(self, g, fn):
        super().__init__(g)
        self.fn = fn

    def _eval(self, seeds):
        return self.fn(seeds)


# gains closer than this are ties (lowest id wins); absorbs float summation noise
GAIN_RESOLUTION = 1e-9


def _key(gain: float) -> int:
    return int(round(gain / GAIN_RESOLUTION))


def _check_k(g: DirectedGraph, k: int):
    if not 1 <= k <= g.node_count:
        raise ValueError(f"k must lie in [1, {g.node_count}], got {k}")


def greedy_select(g: DirectedGraph, k: int, f: InfluenceFunction):
    """Add ``argmax_v f(S + v) - f(S)`` k times; ties go to the lowest node id.

    Gains are compared at ``GAIN_RESOLUTION``.

    Returns ``(seeds, trace)`` with ``trace = [(node, marginal_gain), ...]``.
    """
    _check_k(g, k)
    chosen: list[int] = []
    in_set = np.zeros(g.node_count, dtype=bool)
    current = 0.0
    trace = []
    for _ in range(k):
        cand = np.flatnonzero(~in_set).tolist()
        vals = f.many([chosen + [v] for v in cand])
        best_v, best_key, best_gain, best_val = -1, None, 0.0, 0.0
        for v, val in zip(cand, vals):
            gain = val - current
            if best_key is None or _key(gain) > best_key:
                best_v, best_key, best_gain, best_val = v, _key(gain), gain, val
        chosen.append(best_v)
        in_set[best_v] = True
        trace.append((best_v, best_gain))
        current = best_val
    return sorted(chosen), trace


def lazy_greedy_select(g: DirectedGraph, k: int, f: InfluenceFunction):
    """CELF-style lazy greedy.

    Stale marginal gains upper-bound fresh ones when ``f`` is submodular, so
    only the top of the queue is re-evaluated until a fresh entry surfaces.
    The queue is ordered by ``(-gain, node)``, which reproduces the tie rule of
    :func:`greedy_select`.
    """
    _check_k(g, k)
    nodes = list(range(g.node_count))
    first = f.many([[v] for v in nodes])
    # entries: (-gain key, node, round the gain was computed in, gain, f(S + node))
    heap = [(-_key(val), v, 0, val, val) for v, val in zip(nodes, first)]
    heapq.heapify(heap)
    chosen: list[int] = []
    current = 0.0
    trace = []
    for rnd in range(k):
        while True:
            _, v, stamp, gain, val = heapq.heappop(heap)
            if stamp == rnd:
                break
            val = f(chosen + [v])
            gain = val - current
            heapq.heappush(heap, (-_key(gain), v, rnd, gain, val))
        chosen.append(v)
        trace.append((v, gain))
        current = val
    return sorted(chosen), trace


def maximize_with_surrogate(g: DirectedGraph, k: int, model: ModelParams):
    """Lazy greedy with the stacked surrogate as the influence oracle."""
    return lazy_greedy_select(g, k, SurrogateInfluence(g, model))
