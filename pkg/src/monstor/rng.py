"""Counter-based random streams for reproducible parallel Monte Carlo.

Each MC run gets its own key ``run_key(master_seed, run)``; the coin for an
edge inside a run is the edge-indexed output of a splitmix64 sequence seeded by
that key.  A run therefore sees a fixed live-edge sample regardless of which
worker executes it or in what order.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def run_key(master, run):
    return mix64(mix64(np.uint64(master) + _GOLDEN) ^ (np.uint64(run) * _GOLDEN))


@njit(cache=True, nogil=True)
def uniform(key, index):
    """Uniform draw in [0, 1) at position ``index`` of the stream ``key``."""
    z = mix64(key + (np.uint64(index) + np.uint64(1)) * _GOLDEN)
    return float(z >> _S11) * _INV53


def derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed (63-bit) for nested experiment components."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
