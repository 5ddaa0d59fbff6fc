"""Command implementations shared by the CLI and the HTTP service.

Each function takes plain arguments (file paths, label lists, numbers) and
returns a JSON-compatible dict, so a local run and a remote run through the
service produce the same bytes once formatted.
"""
from __future__ import annotations

import os
from collections import OrderedDict
from threading import Lock

from .cascade import exact_influence, simulate
from .graph import DirectedGraph, load_edge_list
from .im import ExactInfluence, MCInfluence, SurrogateInfluence, greedy_select, lazy_greedy_select
from .model import ModelParams, load_model, stacked_inference

BACKENDS = ("mc", "surrogate", "exact")
ALGORITHMS = ("lazy", "greedy")

_CACHE_SIZE = 8
_cache: "OrderedDict[tuple, object]" = OrderedDict()
_cache_lock = Lock()


def _cached(kind: str, path: str, loader):
    st = os.stat(path)
    key = (kind, os.path.abspath(path), st.st_mtime_ns, st.st_size)
    with _cache_lock:
        if key in _cache:
            _cache.move_to_end(key)
            return _cache[key]
    obj = loader(path)
    with _cache_lock:
        _cache[key] = obj
        while len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)
    return obj


def load_graph(path: str) -> DirectedGraph:
    return _cached("graph", path, load_edge_list)


def load_checkpoint(path: str) -> ModelParams:
    return _cached("model", path, load_model)


def error_message(exc: Exception) -> str:
    """Readable message; ``KeyError`` would otherwise repr its argument."""
    if isinstance(exc, KeyError) and exc.args:
        return str(exc.args[0])
    return str(exc)


def parse_seed_text(text: str) -> list[str]:
    """``"1,5,9"`` -> ``["1", "5", "9"]`` (whitespace tolerant)."""
    out = [x.strip() for x in text.split(",") if x.strip()]
    if not out:
        raise ValueError("seed list is empty")
    return out


def resolve_seeds(g: DirectedGraph, labels) -> list[int]:
    ids = [g.node_id(str(x)) for x in labels]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate seed labels")
    return sorted(ids)


def _vector(g: DirectedGraph, v) -> dict[str, float]:
    return {g.label(i): float(x) for i, x in enumerate(v)}


def run_simulate(graph: str, seeds, runs: int = 10_000, seed: int = 0, workers: int = 1,
                 vectors: bool = False) -> dict:
    g = load_graph(graph)
    res = simulate(g, resolve_seeds(g, seeds), runs, seed, workers)
    out = {"influence": res.influence, "stderr": res.stderr, "runs": res.runs,
           "steps": res.steps}
    if vectors:
        out["final"] = _vector(g, res.final)
    return out


def run_exact(graph: str, seeds, vectors: bool = False) -> dict:
    g = load_graph(graph)
    per_step, infl = exact_influence(g, resolve_seeds(g, seeds))
    out = {"influence": infl, "steps": per_step.shape[0] - 1}
    if vectors:
        out["final"] = _vector(g, per_step[-1])
    return out


def run_estimate(graph: str, model: str, seeds, s: int | None = None,
                 vectors: bool = False) -> dict:
    g = load_graph(graph)
    params = load_checkpoint(model)
    vecs, infl = stacked_inference(g, resolve_seeds(g, seeds), params, s)
    out = {"influence": infl, "stacks": vecs.shape[0] - 1}
    if vectors:
        out["final"] = _vector(g, vecs[-1])
    return out


def make_influence(g: DirectedGraph, backend: str, model: str | None = None,
                   runs: int = 10_000, seed: int = 0, workers: int = 1):
    if backend == "mc":
        return MCInfluence(g, runs, seed, workers)
    if backend == "exact":
        return ExactInfluence(g)
    if backend == "surrogate":
        if not model:
            raise ValueError("surrogate backend needs a model checkpoint")
        return SurrogateInfluence(g, load_checkpoint(model))
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def run_maximize(graph: str, k: int, backend: str = "mc", model: str | None = None,
                 runs: int = 10_000, seed: int = 0, workers: int = 1,
                 algorithm: str = "lazy") -> dict:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    g = load_graph(graph)
    f = make_influence(g, backend, model, runs, seed, workers)
    select = lazy_greedy_select if algorithm == "lazy" else greedy_select
    chosen, trace = select(g, k, f)
    calls = f.calls
    return {
        "seeds": [g.label(v) for v in chosen],
        "influence": f(chosen),
        "trace": [[g.label(v), float(gain)] for v, gain in trace],
        "evaluations": calls,
        "backend": f.describe(),
    }
