"""Experiment drivers: influence-estimation accuracy, submodularity, scaling."""
from __future__ import annotations

import itertools
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cascade import random_seed_set, simulate
from .graph import DirectedGraph, assign_weighted_cascade, generate_rmat
from .im import InfluenceFunction, SurrogateInfluence
from .metrics import pearson, spearman
from .model import ModelParams, stacked_influences
from .rng import derive_seed


@dataclass
class CorrelationReport:
    pearson: float
    spearman: float
    n: int
    truth: list[float] = field(default_factory=list, repr=False)
    estimate: list[float] = field(default_factory=list, repr=False)
    scatter_path: str | None = None


@dataclass
class SubmodularityReport:
    pairs_tested: int
    holds: int
    violation_mape: float | None

    @property
    def holds_ratio(self) -> float:
        return self.holds / self.pairs_tested if self.pairs_tested else 1.0


def correlation(true_vals: Sequence[float], est_vals: Sequence[float]) -> CorrelationReport:
    t = [float(x) for x in true_vals]
    e = [float(x) for x in est_vals]
    return CorrelationReport(pearson(t, e), spearman(t, e), len(t), t, e)


def _seed_size_cap(n: int, frac: float) -> int:
    return max(1, int(np.floor(frac * n)))


def submodularity_probe(g: DirectedGraph, f: InfluenceFunction, n_pairs: int = 200,
                        size_range: tuple[float, float] = (0.0, 0.1), seed: int = 0,
                        tol: float = 1e-9) -> SubmodularityReport:
    """Test ``f(S) + f(T) >= f(S | T) + f(S & T)`` on random pairs.

    A pool of random seed sets (sizes uniform from ``max(1, lo * |V|)`` to
    ``max(1, hi * |V|)``) is drawn, just large enough to hold ``n_pairs``
    distinct pairs; ``n_pairs`` of those pairs are tested.  ``tol`` absorbs
    floating-point noise in the comparison.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    n = g.node_count
    lo = max(1, int(np.floor(size_range[0] * n)))
    hi = max(lo, _seed_size_cap(n, size_range[1]))
    rng = np.random.default_rng(derive_seed(seed, 31))
    m = 2
    while m * (m - 1) // 2 < n_pairs:
        m += 1
    pool = []
    for _ in range(m):
        size = int(rng.integers(lo, hi + 1))
        pool.append(frozenset(rng.choice(n, size=min(size, n), replace=False).tolist()))
    pairs = list(itertools.combinations(range(m), 2))
    if len(pairs) > n_pairs:
        pick = np.sort(rng.choice(len(pairs), size=n_pairs, replace=False))
        pairs = [pairs[i] for i in pick]
    needed = set(pool)
    for a, b in pairs:
        needed.add(pool[a] | pool[b])
        needed.add(pool[a] & pool[b])
    keys = sorted(needed, key=lambda s: (len(s), sorted(s)))
    vals = dict(zip(keys, f.many([sorted(s) for s in keys])))
    holds = 0
    errs = []
    for a, b in pairs:
        S, T = pool[a], pool[b]
        lhs = vals[S] + vals[T]
        rhs = vals[S | T] + vals[S & T]
        if lhs >= rhs - tol:
            holds += 1
        else:
            errs.append((rhs - lhs) / rhs)
    return SubmodularityReport(len(pairs), holds, float(np.mean(errs)) if errs else None)


def run_ie_eval(g: DirectedGraph, model, n_sets: int = 200, runs: int = 10_000, seed: int = 0,
                workers: int = 1) -> CorrelationReport:
    """Surrogate (or any influence function) vs MC ground truth on random seed sets.

    Seed-set sizes are uniform in ``[1, max(1, |V| // 50)]``.
    """
    n = g.node_count
    rng = np.random.default_rng(derive_seed(seed, 41))
    sets = [random_seed_set(rng, n, max(1, n // 50)).tolist() for _ in range(n_sets)]
    truth = [simulate(g, s, runs, derive_seed(seed, 42, j), workers).influence
             for j, s in enumerate(sets)]
    if isinstance(model, ModelParams):
        est = SurrogateInfluence(g, model).many(sets)
    else:
        est = model.many(sets)
    return correlation(truth, est)


@dataclass
class ScaleRow:
    log2_edges: int
    nodes: int
    edges: int
    estimations: int
    stacks: int
    seconds: float  # total wall time for all estimations, per stacked application

    @property
    def per_estimation(self) -> float:
        return self.seconds / self.estimations


def run_scalability(log2_edge_range: Sequence[int], estimations: int, model: ModelParams,
                    seed: int = 0, memory_cap_bytes: int = 2 << 30,
                    repeats: int = 1) -> list[ScaleRow]:
    """Time stacked inference on R-MAT / weighted-cascade graphs of growing size.

    Seed sets have sizes uniform in ``[1, max(1, 0.1 |V|)]``.  Only inference is
    timed (graph generation excluded); the reported seconds are the wall time
    of ``estimations`` estimations divided by the stack count.  All graphs are
    built first and the sizes are then timed round-robin ``repeats`` times.
    Each estimation keeps its fastest time over the passes, which filters
    out transient slowdowns from other load on the machine.
    """
    width = max(model.dims)
    cases = []
    for k in log2_edge_range:
        m = 1 << int(k)
        n = int(np.ceil(0.2 * m))
        need = 8 * (n * 2 * width * 6 + m * 4)
        if need > memory_cap_bytes:
            raise MemoryError(f"2^{k} edges needs ~{need} bytes, above cap {memory_cap_bytes}")
        g = assign_weighted_cascade(generate_rmat(int(k), seed=derive_seed(seed, 51, int(k))))
        rng = np.random.default_rng(derive_seed(seed, 52, int(k)))
        cap = _seed_size_cap(g.node_count, 0.1)
        sets = [random_seed_set(rng, g.node_count, cap).tolist() for _ in range(estimations)]
        stacked_influences(g, sets[:1], model, [model.s])  # warm caches / JIT
        cases.append((int(k), g, sets))
    best = [np.full(estimations, np.inf) for _ in cases]
    for _ in range(max(1, repeats)):
        for i, (_, g, sets) in enumerate(cases):
            for j, s in enumerate(sets):
                t0 = time.perf_counter()
                stacked_influences(g, [s], model, [model.s])
                best[i][j] = min(best[i][j], time.perf_counter() - t0)
    return [ScaleRow(k, g.node_count, g.edge_count, estimations, model.s, float(b.sum()) / model.s)
            for (k, g, _), b in zip(cases, best)]


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_tsv(path, columns: Sequence[str], rows: Sequence[Sequence], meta: dict) -> None:
    """TSV with a ``#`` header naming revision, seed and config."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# revision\t{git_revision()}\n")
        for k in sorted(meta):
            fh.write(f"# {k}\t{meta[k]}\n")
        fh.write("\t".join(columns) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(x) for x in r) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)
