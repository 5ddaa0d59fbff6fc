"""Independent Cascade simulation, exact enumeration and training tuples."""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .graph import DirectedGraph
from .rng import derive_seed, run_key, uniform

EXACT_EDGE_LIMIT = 22


def seed_array(seeds, node_count: int) -> np.ndarray:
    """Validate a seed collection and return it as a sorted unique int array."""
    raw = np.asarray(list(seeds), dtype=np.int64).ravel()
    s = np.unique(raw)
    if s.size == 0:
        raise ValueError("seed set is empty")
    if s[0] < 0 or s[-1] >= node_count:
        raise ValueError(f"seed id out of range [0, {node_count})")
    if s.size != raw.size:
        raise ValueError("duplicate seed ids")
    return s


def seed_indicator(seeds, node_count: int) -> np.ndarray:
    x = np.zeros(node_count)
    x[seed_array(seeds, node_count)] = 1.0
    return x


@dataclass
class SimulationResult:
    per_step: np.ndarray  # (h + 1, n): row i is pi_i
    influence: float
    runs: int
    stderr: float

    @property
    def steps(self) -> int:
        return self.per_step.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.per_step[-1]


@njit(cache=True, nogil=True)
def _simulate_chunk(out_indptr, dst, prob, seeds, master, run_lo, run_hi, n):
    hist = np.zeros((8, n), dtype=np.int64)
    sizes = np.zeros(run_hi - run_lo, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)  # run index that infected the node
    frontier = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    depth = 0
    for run in range(run_lo, run_hi):
        key = run_key(master, run)
        nf = 0
        for s in seeds:
            mark[s] = run
            frontier[nf] = s
            nf += 1
            hist[0, s] += 1
        total = nf
        step = 0
        while nf > 0:
            step += 1
            nn = 0
            for j in range(nf):
                u = frontier[j]
                for e in range(out_indptr[u], out_indptr[u + 1]):
                    v = dst[e]
                    if mark[v] == run:
                        continue
                    # one coin per (run, edge); an edge is tried at most once
                    if uniform(key, e) < prob[e]:
                        mark[v] = run
                        nxt[nn] = v
                        nn += 1
            if nn > 0:
                if step >= hist.shape[0]:
                    grown = np.zeros((2 * hist.shape[0], n), dtype=np.int64)
                    grown[:hist.shape[0]] = hist
                    hist = grown
                for j in range(nn):
                    hist[step, nxt[j]] += 1
                if step > depth:
                    depth = step
            total += nn
            frontier, nxt = nxt, frontier
            nf = nn
        sizes[run - run_lo] = total
    return hist[:depth + 1], sizes


def simulate(g: DirectedGraph, seeds, runs: int = 10_000, master_seed: int = 0,
             workers: int = 1) -> SimulationResult:
    """Monte Carlo estimate of the per-step infection probabilities.

    ``per_step[i][x]`` is the fraction of runs in which ``x`` was infected by
    step ``i``.  Rows stop at the deepest step any run reached, so the last row
    is the converged vector.  Runs are split into ``workers`` contiguous chunks;
    counts are integers, so the result does not depend on ``workers``.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    s = seed_array(seeds, g.node_count)
    n = g.node_count
    master = np.uint64(int(master_seed) & 0xFFFFFFFFFFFFFFFF)
    workers = max(1, min(int(workers), runs))
    bounds = np.linspace(0, runs, workers + 1).astype(np.int64)

    def work(k):
        return _simulate_chunk(g.out_indptr, g.dst, g.prob, s, master,
                               int(bounds[k]), int(bounds[k + 1]), n)

    if workers == 1:
        parts = [work(0)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, range(workers)))
    depth = max(h.shape[0] for h, _ in parts)
    hist = np.zeros((depth, n), dtype=np.int64)
    for h, _ in parts:
        hist[:h.shape[0]] += h
    sizes = np.concatenate([sz for _, sz in parts])
    per_step = np.cumsum(hist, axis=0) / runs
    per_step[:, s] = 1.0
    influence = float(sizes.sum() / runs)
    stderr = float(sizes.std(ddof=1) / np.sqrt(runs)) if runs > 1 else float("inf")
    return SimulationResult(per_step, influence, runs, stderr)


@njit(cache=True)
def _exact_kernel(out_indptr, dst, prob, seeds, n, m):
    acc = np.zeros((n, n))  # acc[d, x]: probability that x is first reached at distance d
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for mask in range(1 << m):
        w = 1.0
        for e in range(m):
            if (mask >> e) & 1:
                w *= prob[e]
            else:
                w *= 1.0 - prob[e]
        if w == 0.0:
            continue
        dist[:] = -1
        qh = 0
        qt = 0
        for s in seeds:
            dist[s] = 0
            queue[qt] = s
            qt += 1
        while qh < qt:
            u = queue[qh]
            qh += 1
            for e in range(out_indptr[u], out_indptr[u + 1]):
                if (mask >> e) & 1:
                    v = dst[e]
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        queue[qt] = v
                        qt += 1
        for x in range(n):
            if dist[x] >= 0:
                acc[dist[x], x] += w
    return acc


def exact_influence(g: DirectedGraph, seeds) -> tuple[np.ndarray, float]:
    """Exact per-step infection probabilities by live-edge enumeration.

    Every one of the ``2**|E|`` live-edge subsets is weighted by its
    probability; ``rho_i(x)`` is the mass of subsets in which ``x`` is within
    BFS distance ``i`` of the seeds.  Returns ``(per_step, influence)`` with the
    same truncation rule as :func:`simulate`.
    """
    m = g.edge_count
    if m > EXACT_EDGE_LIMIT:
        raise ValueError(f"exact enumeration limited to {EXACT_EDGE_LIMIT} edges, graph has {m}")
    s = seed_array(seeds, g.node_count)
    acc = _exact_kernel(g.out_indptr, g.dst, g.prob, s, g.node_count, m)
    reached = np.flatnonzero(acc.any(axis=1))
    depth = int(reached[-1]) if reached.size else 0
    per_step = np.cumsum(acc[:depth + 1], axis=0)
    per_step[:, s] = 1.0
    np.clip(per_step, 0.0, 1.0, out=per_step)
    # correctly rounded total: equal per-node vectors in any order give equal influence
    return per_step, math.fsum(per_step[-1].tolist())


@dataclass
class TrainingTuple:
    step: int  # i
    target: np.ndarray  # pi_i
    history: np.ndarray  # (e, n): pi_{i-1}, ..., pi_{i-e}
    graph_id: str

    @property
    def e(self) -> int:
        return self.history.shape[0]


def random_seed_set(rng: np.random.Generator, n: int, max_size: int) -> np.ndarray:
    size = int(rng.integers(1, max(1, max_size) + 1))
    return np.sort(rng.choice(n, size=min(size, n), replace=False))


def tuples_from_result(res: SimulationResult, e: int, graph_id: str) -> list[TrainingTuple]:
    ps = res.per_step
    return [TrainingTuple(i, ps[i].copy(), ps[i - e:i][::-1].copy(), graph_id)
            for i in range(e, ps.shape[0])]


def generate_tuples(g: DirectedGraph, n_tuples: int, e: int = 4, runs: int = 10_000,
                    master_seed: int = 0, graph_id: str = "graph", workers: int = 1,
                    max_barren: int = 1000) -> list[TrainingTuple]:
    """Collect ``(pi_i, pi_{i-1}, ..., pi_{i-e})`` tuples for ``i >= e``.

    Seed-set sizes are uniform in ``[1, max(1, |V| // 50)]``.  Simulation ``j``
    uses seeds derived from ``(master_seed, j)`` so the output is independent
    of ``workers``.
    """
    if e < 2:
        raise ValueError("e must be >= 2")
    if n_tuples < 1:
        raise ValueError("n_tuples must be >= 1")
    n = g.node_count
    max_size = max(1, n // 50)

    def one(j):
        rng = np.random.default_rng(derive_seed(master_seed, 0, j))
        seeds = random_seed_set(rng, n, max_size)
        res = simulate(g, seeds, runs, derive_seed(master_seed, 1, j))
        return tuples_from_result(res, e, graph_id)

    out: list[TrainingTuple] = []
    barren = 0
    j = 0
    batch = max(1, int(workers))
    pool = ThreadPoolExecutor(batch) if batch > 1 else None
    try:
        while len(out) < n_tuples:
            ids = range(j, j + batch)
            results = list(pool.map(one, ids)) if pool else [one(k) for k in ids]
            j += batch
            for tl in results:
                if len(out) >= n_tuples:
                    break
                if not tl:
                    barren += 1
                    if barren >= max_barren:
                        raise RuntimeError(
                            f"{barren} simulations in a row produced no cascade deeper than e={e}")
                    continue
                barren = 0
                out.extend(tl[:n_tuples - len(out)])
    finally:
        if pool:
            pool.shutdown()
    return out


_TUPLE_MAGIC = b"MONT"
_TUPLE_VERSION = 1


def save_tuples(path, tuples: Sequence[TrainingTuple]) -> None:
    """Binary container: header then per-tuple step, e+1 f64 vectors, graph id."""
    if not tuples:
        raise ValueError("no tuples to save")
    n = tuples[0].target.size
    e = tuples[0].e
    with open(path, "wb") as fh:
        fh.write(_TUPLE_MAGIC)
        fh.write(struct.pack("<IQIQ", _TUPLE_VERSION, n, e, len(tuples)))
        for t in tuples:
            if t.target.size != n or t.e != e:
                raise ValueError("all tuples in a file must share |V| and e")
            fh.write(struct.pack("<I", t.step))
            fh.write(np.ascontiguousarray(t.target, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(t.history, dtype="<f8").tobytes())
            gid = t.graph_id.encode("utf-8")
            fh.write(struct.pack("<I", len(gid)))
            fh.write(gid)


def load_tuples(path) -> list[TrainingTuple]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _TUPLE_MAGIC:
        raise ValueError(f"{path}: not a tuple file (bad magic)")
    version, n, e, count = struct.unpack_from("<IQIQ", data, 4)
    if version != _TUPLE_VERSION:
        raise ValueError(f"{path}: unsupported tuple file version {version}")
    off = 4 + struct.calcsize("<IQIQ")
    out = []
    for _ in range(count):
        (step,) = struct.unpack_from("<I", data, off)
        off += 4
        vecs = np.frombuffer(data, dtype="<f8", count=(e + 1) * n, offset=off).reshape(e + 1, n)
        off += 8 * (e + 1) * n
        (glen,) = struct.unpack_from("<I", data, off)
        off += 4
        gid = data[off:off + glen].decode("utf-8")
        off += glen
        out.append(TrainingTuple(step, vecs[0].astype(np.float64), vecs[1:].astype(np.float64), gid))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} tuples")
    return out
