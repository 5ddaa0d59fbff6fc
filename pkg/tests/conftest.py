import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import monstor.cascade  # noqa: E402
from monstor.graph import from_edges  # noqa: E402

# Every Monte Carlo simulation in the session is checked for non-decreasing
# per-step vectors; the acceptance gate reports the tally.
SIM_TALLY = {"simulations": 0, "violations": 0}
_simulate = monstor.cascade.simulate


def _checked_simulate(*args, **kwargs):
    res = _simulate(*args, **kwargs)
    SIM_TALLY["simulations"] += 1
    if np.any(np.diff(res.per_step, axis=0) < 0):
        SIM_TALLY["violations"] += 1
    return res


for _mod in ("cascade", "im", "train", "evaluation", "commands"):
    __import__(f"monstor.{_mod}")
    sys.modules[f"monstor.{_mod}"].simulate = _checked_simulate

PATH_EDGES = [(0, 1, 0.5), (1, 2, 0.5)]
DIAMOND_EDGES = [(0, 1, 0.5), (0, 2, 0.5), (1, 3, 0.5), (2, 3, 0.5)]  # s=0 a=1 b=2 t=3
# centres 0 (5 leaves) and 6 (3 leaves)
TWO_STAR_EDGES = [(0, i, 1.0) for i in range(1, 6)] + [(6, i, 1.0) for i in range(7, 10)]


@pytest.fixture
def path_graph():
    return from_edges(PATH_EDGES, 3)


@pytest.fixture
def diamond():
    return from_edges(DIAMOND_EDGES, 4)


@pytest.fixture
def two_star():
    return from_edges(TWO_STAR_EDGES, 10)


def random_graph(rng, n_lo=3, n_hi=8, max_edges=12, p_lo=0.1, p_hi=0.9):
    """Random simple digraph as ``(n, edges)`` with ``len(edges) <= max_edges``."""
    n = int(rng.integers(n_lo, n_hi + 1))
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    m = int(rng.integers(1, min(max_edges, len(pairs)) + 1))
    pick = rng.choice(len(pairs), size=m, replace=False)
    edges = [(pairs[i][0], pairs[i][1], float(rng.uniform(p_lo, p_hi))) for i in sorted(pick)]
    return n, edges


def random_seeds(rng, n, max_size=None):
    size = int(rng.integers(1, (max_size or n) + 1))
    return sorted(rng.choice(n, size=min(size, n), replace=False).tolist())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RESULTS = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    _RESULTS[criterion] = (ok, detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    if 3 in _RESULTS:
        ok = _RESULTS[3][0] and SIM_TALLY["violations"] == 0
        _RESULTS[3] = (ok, f"{SIM_TALLY['simulations']} simulations in the whole session, "
                           f"{SIM_TALLY['violations']} with a decreasing entry")
    terminalreporter.section("acceptance criteria")
    for c in sorted(_RESULTS):
        ok, detail = _RESULTS[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} ({detail})")
