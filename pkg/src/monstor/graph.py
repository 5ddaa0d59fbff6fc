"""Directed activation-probability graphs stored in CSR form.

Edges are kept in canonical ``(src, dst)`` order.  Two compressed indexes are
built on construction: one by source (cascade fan-out) and one by destination
(in-neighbour aggregation).  Both index into the same canonical edge arrays, so
they always describe the identical edge set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphFormatError(ValueError):
    """Raised for malformed edge-list input."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    node_count: int
    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    labels: tuple[str, ...] | None = None
    # derived indexes, filled in __post_init__
    out_indptr: np.ndarray = field(init=False, repr=False)
    out_edges: np.ndarray = field(init=False, repr=False)
    in_indptr: np.ndarray = field(init=False, repr=False)
    in_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.node_count)
        if n < 1:
            raise GraphFormatError("graph needs at least one node")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        prob = np.asarray(self.prob, dtype=np.float64).ravel()
        if not (src.shape == dst.shape == prob.shape):
            raise GraphFormatError("src, dst and prob must have equal length")
        if src.size:
            if src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n:
                raise GraphFormatError("node id out of range")
            if np.any(src == dst):
                raise GraphFormatError("self-loop")
            if not np.all(np.isfinite(prob)) or prob.min() < 0.0 or prob.max() > 1.0:
                raise GraphFormatError("probability out of range")
        order = np.lexsort((dst, src))
        src, dst, prob = src[order], dst[order], prob[order]
        if src.size > 1:
            same = (src[1:] == src[:-1]) & (dst[1:] == dst[:-1])
            if same.any():
                j = int(np.flatnonzero(same)[0])
                raise GraphFormatError(f"duplicate edge ({src[j]}, {dst[j]})")
        if self.labels is not None and len(self.labels) != n:
            raise GraphFormatError("labels length must equal node_count")

        out_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=out_indptr[1:])
        in_edges = np.lexsort((src, dst)).astype(np.int64)
        in_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=in_indptr[1:])

        set_ = object.__setattr__
        set_(self, "node_count", n)
        set_(self, "src", _freeze(src))
        set_(self, "dst", _freeze(dst))
        set_(self, "prob", _freeze(prob))
        set_(self, "out_indptr", _freeze(out_indptr))
        set_(self, "out_edges", _freeze(np.arange(src.size, dtype=np.int64)))
        set_(self, "in_indptr", _freeze(in_indptr))
        set_(self, "in_edges", _freeze(in_edges))
        if self.labels is not None:
            set_(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def edge_count(self) -> int:
        return int(self.src.size)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_indptr)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_indptr)

    def in_neighbors(self, v: int) -> np.ndarray:
        e = self.in_edges[self.in_indptr[v]:self.in_indptr[v + 1]]
        return self.src[e]

    def out_neighbors(self, u: int) -> np.ndarray:
        return self.dst[self.out_indptr[u]:self.out_indptr[u + 1]]

    def label(self, v: int) -> str:
        return self.labels[v] if self.labels is not None else str(v)

    def node_id(self, label: str) -> int:
        """Dense id for an external label (falls back to integer parsing)."""
        if self.labels is not None:
            try:
                return self._label_index()[label]
            except KeyError:
                raise KeyError(f"unknown node label {label!r}") from None
        v = int(label)
        if not 0 <= v < self.node_count:
            raise KeyError(f"node id {v} out of range")
        return v

    def _label_index(self) -> dict[str, int]:
        idx = self.__dict__.get("_lab_idx")
        if idx is None:
            idx = {lab: i for i, lab in enumerate(self.labels)}
            object.__setattr__(self, "_lab_idx", idx)
        return idx

    def with_probs(self, prob: np.ndarray) -> "DirectedGraph":
        """Same topology, new edge probabilities (canonical edge order)."""
        return DirectedGraph(self.node_count, self.src, self.dst, prob, self.labels)

    def dense(self) -> np.ndarray:
        """The activation probability matrix as a dense array (small graphs only)."""
        P = np.zeros((self.node_count, self.node_count))
        P[self.src, self.dst] = self.prob
        return P

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.prob.tolist()))


def from_edges(edges: Iterable[Sequence], node_count: int | None = None,
               labels: Sequence[str] | None = None) -> DirectedGraph:
    """Build a graph from ``(src, dst, prob)`` triples of integer ids."""
    edges = list(edges)
    if edges:
        arr = np.array([(int(u), int(v)) for u, v, _ in edges], dtype=np.int64)
        prob = np.array([float(p) for _, _, p in edges], dtype=np.float64)
        src, dst = arr[:, 0], arr[:, 1]
    else:
        src = dst = np.zeros(0, dtype=np.int64)
        prob = np.zeros(0)
    if node_count is None:
        node_count = int(max(src.max(), dst.max()) + 1) if edges else 1
    return DirectedGraph(node_count, src, dst, prob, labels)


def load_edge_list(path, node_map: str | Path | None = None) -> DirectedGraph:
    """Parse a ``src<TAB>dst<TAB>prob`` edge list.

    Labels are arbitrary strings; dense ids follow first appearance.  Any run of
    whitespace is accepted as the separator.  If ``node_map`` is given, the
    label to id mapping is written there as TSV.
    """
    ids: dict[str, int] = {}
    src, dst, prob = [], [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise GraphFormatError(f"line {lineno}: expected 3 fields, got {len(parts)}")
            a, b, p = parts
            try:
                pv = float(p)
            except ValueError:
                raise GraphFormatError(f"line {lineno}: bad probability {p!r}") from None
            if not (0.0 <= pv <= 1.0):
                raise GraphFormatError(f"line {lineno}: probability out of range: {p}")
            if a == b:
                raise GraphFormatError(f"line {lineno}: self-loop on {a!r}")
            u = ids.setdefault(a, len(ids))
            v = ids.setdefault(b, len(ids))
            if (u, v) in seen:
                raise GraphFormatError(f"line {lineno}: duplicate edge {a} -> {b}")
            seen.add((u, v))
            src.append(u)
            dst.append(v)
            prob.append(pv)
    if not src:
        raise GraphFormatError(f"{path}: no edges")
    labels = tuple(ids)
    g = DirectedGraph(len(ids), np.array(src), np.array(dst), np.array(prob), labels)
    if node_map is not None:
        write_node_map(g, node_map)
    return g


def write_node_map(g: DirectedGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# label\tid\n")
        for i in range(g.node_count):
            fh.write(f"{g.label(i)}\t{i}\n")


def write_edge_list(g: DirectedGraph, path, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for u, v, p in zip(g.src.tolist(), g.dst.tolist(), g.prob.tolist()):
            fh.write(f"{g.label(u)}\t{g.label(v)}\t{p!r}\n")


def propagate(v, g: DirectedGraph) -> np.ndarray:
    """Return ``w`` with ``w[y] = sum over in-edges (x, y) of v[x] * p(x, y)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (g.node_count,):
        raise ValueError(f"vector length {v.shape} does not match node_count {g.node_count}")
    return np.bincount(g.dst, weights=v[g.src] * g.prob, minlength=g.node_count)


def generate_rmat(log2_edges: int, a=0.7, b=0.1, c=0.1, d=0.1, seed=0) -> DirectedGraph:
    """R-MAT graph with ``2**log2_edges`` drawn edges on ``ceil(0.2 * E)`` nodes.

    Edges are drawn by recursive quadrant descent over a ``2**k`` square with
    ``2**k >= node_count``; draws landing outside the node range are redrawn.
    Duplicates and self-loops are then dropped.  All edge probabilities are 0;
    use :func:`assign_weighted_cascade` to weight them.
    """
    if abs(a + b + c + d - 1.0) > 1e-9:
        raise ValueError(f"quadrant probabilities must sum to 1, got {a + b + c + d}")
    if min(a, b, c, d) < 0:
        raise ValueError("quadrant probabilities must be non-negative")
    if log2_edges < 4:
        raise ValueError("log2_edges must be >= 4")
    m = 1 << log2_edges
    n = math.ceil(0.2 * m)
    depth = max(1, (n - 1).bit_length())
    rng = np.random.default_rng(seed)
    quad = np.array([a, b, c, d])
    src = np.empty(m, dtype=np.int64)
    dst = np.empty(m, dtype=np.int64)
    todo = np.arange(m)
    while todo.size:
        u = np.zeros(todo.size, dtype=np.int64)
        v = np.zeros(todo.size, dtype=np.int64)
        for _ in range(depth):
            q = rng.choice(4, size=todo.size, p=quad)
            u = (u << 1) | (q >> 1)
            v = (v << 1) | (q & 1)
        ok = (u < n) & (v < n)
        src[todo[ok]] = u[ok]
        dst[todo[ok]] = v[ok]
        todo = todo[~ok]
    keep = src != dst
    pairs = np.unique(src[keep] * n + dst[keep])
    return DirectedGraph(n, pairs // n, pairs % n, np.zeros(pairs.size))


def assign_weighted_cascade(g: DirectedGraph) -> DirectedGraph:
    """Set every edge ``(u, v)`` to ``1 / in_degree(v)``."""
    if g.edge_count == 0:
        raise ValueError("graph has no edges")
    indeg = g.in_degree()
    return g.with_probs(1.0 / indeg[g.dst])
