"""Stacked graph-convolution step estimator.

One application of the network maps the last ``e`` infection vectors to an
estimate of the next one; the output is clamped between the previous vector
(monotonicity) and the union bound ``pi_{i-1} + (pi_{i-1} - pi_{i-2}) P``.
Stacking ``s`` applications estimates the final infection vector from the
seed indicator alone.
"""
from __future__ import annotations

import struct
import threading
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit

from .cascade import seed_indicator
from .graph import DirectedGraph, propagate

PAD_ZERO = 0  # pi_j := 0 for j < 0
PAD_SEED = 1  # pi_j := pi_0 for j < 0
_PAD_NAMES = {"zero": PAD_ZERO, "seed": PAD_SEED}


@dataclass
class LayerParams:
    W1: np.ndarray  # (d_in, d_in)
    b1: np.ndarray  # (d_in,)
    W2: np.ndarray  # (2 d_in, d_out)
    b2: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[1]

    def arrays(self):
        return (self.W1, self.b1, self.W2, self.b2)


@dataclass
class ModelParams:
    e: int = 4
    s: int = 3
    lam: float = 0.3
    dims: tuple[int, ...] = (4, 16, 16, 1)
    pad: int = PAD_ZERO
    layers: list[LayerParams] = field(default_factory=list)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.dims) - 1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.dims[0] != self.e:
            raise ValueError(f"input width {self.dims[0]} must equal e={self.e}")
        if self.dims[-1] != 1:
            raise ValueError("last layer must have width 1")
        if self.layers:
            self._check_layers()

    def _check_layers(self):
        if len(self.layers) != self.l:
            raise ValueError(f"expected {self.l} layers, got {len(self.layers)}")
        for k, L in enumerate(self.layers):
            a, b = self.dims[k], self.dims[k + 1]
            if (L.W1.shape != (a, a) or L.b1.shape != (a,)
                    or L.W2.shape != (2 * a, b) or L.b2.shape != (b,)):
                raise ValueError(f"layer {k} shapes do not match dims {self.dims}")

    @classmethod
    def init(cls, e=4, hidden=16, l=3, s=3, lam=0.3, seed=0, pad="zero") -> "ModelParams":  # noqa: E741
        """Uniform ``[-sqrt(1/fan_in), sqrt(1/fan_in)]`` initialisation."""
        dims = (e,) + (hidden,) * (l - 1) + (1,)
        rng = np.random.default_rng(seed)
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            r1 = np.sqrt(1.0 / a)
            r2 = np.sqrt(1.0 / (2 * a))
            layers.append(LayerParams(rng.uniform(-r1, r1, (a, a)), rng.uniform(-r1, r1, a),
                                      rng.uniform(-r2, r2, (2 * a, b)), rng.uniform(-r2, r2, b)))
        layers[-1].b2[:] = 0.0  # a negative output bias starts with every unit dead
        return cls(e, s, lam, dims, _pad_code(pad), layers)

    @classmethod
    def zeros(cls, e=4, hidden=16, l=3, s=3, lam=0.3, pad="zero") -> "ModelParams":  # noqa: E741
        p = cls.init(e, hidden, l, s, lam, 0, pad)
        p.set_flat(np.zeros(p.size))
        return p

    @property
    def size(self) -> int:
        return sum(a.size for L in self.layers for a in L.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for L in self.layers for a in L.arrays()])

    def set_flat(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=np.float64)
        if v.size != self.size:
            raise ValueError("flat parameter vector has wrong size")
        off = 0
        for L in self.layers:
            for name in ("W1", "b1", "W2", "b2"):
                a = getattr(L, name)
                setattr(L, name, v[off:off + a.size].reshape(a.shape).copy())
                off += a.size

    def copy(self) -> "ModelParams":
        out = ModelParams(self.e, self.s, self.lam, self.dims, self.pad,
                          [LayerParams(*(a.copy() for a in L.arrays())) for L in self.layers])
        return out


def _pad_code(pad) -> int:
    if isinstance(pad, str):
        return _PAD_NAMES[pad]
    return int(pad)


# ---------------------------------------------------------------------------
# per-graph operators

class _GraphOps:
    """Arrays derived from a graph that the forward/backward passes reuse."""

    def __init__(self, g: DirectedGraph):
        n = g.node_count
        self.n = n
        eids = g.in_edges
        self.indptr = g.in_indptr
        self.src = np.ascontiguousarray(g.src[eids])  # edges in (dst, src) order
        self.p = np.ascontiguousarray(g.prob[eids])
        # P^T so that (P^T x) = x P for column vectors
        self.PT = sp.csr_matrix((g.prob, (g.dst, g.src)), shape=(n, n))
        self._local = threading.local()

    def buffer(self, key, shape) -> np.ndarray:
        """Per-thread scratch array, reused across calls to avoid allocator churn."""
        bufs = self._local.__dict__.setdefault("bufs", {})
        b = bufs.get(key)
        if b is None or b.shape != shape:
            b = bufs[key] = np.empty(shape)
        return b


_OPS_CACHE: "weakref.WeakKeyDictionary[DirectedGraph, _GraphOps]" = weakref.WeakKeyDictionary()


def graph_ops(g: DirectedGraph) -> _GraphOps:
    ops = _OPS_CACHE.get(g)
    if ops is None:
        ops = _GraphOps(g)
        _OPS_CACHE[g] = ops
    return ops


@njit(cache=True, nogil=True)
def _max_aggregate(Z, indptr, src, p):
    """Per node and column, max over in-edges of ``p_e * Z[src_e]``.

    Returns the maxima (0 for nodes without in-edges) and the winning edge
    position (-1 when none).  Edges are ordered by source id within each
    destination and only a strictly larger value replaces the current best,
    so ties go to the lowest in-neighbour id.
    """
    n, F = Z.shape
    A = np.zeros((n, F))
    arg = np.full((n, F), -1, dtype=np.int64)
    for v in range(n):
        lo = indptr[v]
        hi = indptr[v + 1]
        if lo == hi:
            continue
        pe = p[lo]
        row = Z[src[lo]]
        for f in range(F):
            A[v, f] = pe * row[f]
            arg[v, f] = lo
        for e in range(lo + 1, hi):
            pe = p[e]
            row = Z[src[e]]
            for f in range(F):
                val = pe * row[f]
                if val > A[v, f]:
                    A[v, f] = val
                    arg[v, f] = e
    return A, arg


@njit(cache=True, nogil=True)
def _max_rows(Z, indptr, src, p, v_lo, v_hi, A):
    """``_max_aggregate`` values for nodes ``v_lo..v_hi-1`` into ``A`` (no argmax)."""
    F = Z.shape[1]
    for v in range(v_lo, v_hi):
        r = v - v_lo
        lo = indptr[v]
        hi = indptr[v + 1]
        if lo == hi:
            A[r, :] = 0.0
            continue
        pe = p[lo]
        row = Z[src[lo]]
        for f in range(F):
            A[r, f] = pe * row[f]
        for e in range(lo + 1, hi):
            pe = p[e]
            row = Z[src[e]]
            for f in range(F):
                val = pe * row[f]
                if val > A[r, f]:
                    A[r, f] = val


@njit(cache=True, nogil=True)
def _max_aggregate_back(dA, arg, src, p):
    n, F = dA.shape
    dZ = np.zeros((n, F))
    for v in range(n):
        for f in range(F):
            e = arg[v, f]
            if e >= 0:
                dZ[src[e], f] += p[e] * dA[v, f]
    return dZ


@njit(cache=True, nogil=True)
def _second_gap(Z, indptr, src, p):
    """Smallest gap between the best and runner-up message over all nodes/columns."""
    n, F = Z.shape
    gap = np.inf
    for v in range(n):
        lo = indptr[v]
        hi = indptr[v + 1]
        if hi - lo < 2:
            continue
        for f in range(F):
            b1 = -np.inf
            b2 = -np.inf
            for e in range(lo, hi):
                val = p[e] * Z[src[e], f]
                if val > b1:
                    b2 = b1
                    b1 = val
                elif val > b2:
                    b2 = val
            if b1 - b2 < gap:
                gap = b1 - b2
    return gap


# ---------------------------------------------------------------------------
# features and bounds

def build_features(history) -> np.ndarray:
    """Node features from a newest-first history ``[pi_{i-1}, ..., pi_{i-e}]``.

    Row ``v`` is ``(rho_{i-e+1}(v) - rho_{i-e}(v), ..., rho_{i-1}(v) - rho_{i-2}(v),
    rho_{i-1}(v))``.  Takes ``(e, n)`` or a batch ``(B, e, n)`` and returns
    ``(n, e)`` or ``(B, n, e)``.
    """
    H = np.asarray(history, dtype=np.float64)
    single = H.ndim == 2
    if single:
        H = H[None]
    oldest_first = H[:, ::-1, :]
    deltas = np.diff(oldest_first, axis=1)
    if deltas.size and deltas.min() < -1e-9:
        raise ValueError("history is not monotone: infection probability decreased")
    feats = np.concatenate([deltas, H[:, :1, :]], axis=1).transpose(0, 2, 1)
    return feats[0] if single else feats


def upper_bound(history, g: DirectedGraph) -> np.ndarray:
    """``min(pi_{i-1} + propagate(pi_{i-1} - pi_{i-2}), 1)``."""
    H = np.asarray(history, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 2:
        raise ValueError("need at least two history vectors")
    if H.shape[1] != g.node_count:
        raise ValueError(f"vector length {H.shape[1]} does not match node_count {g.node_count}")
    return np.minimum(H[0] + propagate(H[0] - H[1], g), 1.0)


def _upper_bound_batch(H: np.ndarray, ops: _GraphOps) -> np.ndarray:
    """Batched bound, returned node-major ``(n, B)``."""
    newest = H[:, 0, :].T
    return np.minimum(newest + ops.PT @ (newest - H[:, 1, :].T), 1.0)


# ---------------------------------------------------------------------------
# forward / backward
#
# Internally everything is node-major: features are (n, B, d).

@dataclass
class _Cache:
    layers: list = field(default_factory=list)  # per layer: H, argmax, C, Y
    prev: np.ndarray | None = None
    ub: np.ndarray | None = None
    raw: np.ndarray | None = None


def _mm(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W`` over the last axis as a single 2-D product."""
    return (X.reshape(-1, X.shape[-1]) @ W).reshape(X.shape[:-1] + (W.shape[1],))


_TILE_ROWS = 2048  # rows of (node, batch) per block; keeps a block's arrays in L2


def _layer_infer(H: np.ndarray, L: LayerParams, ops: _GraphOps, idx: int) -> np.ndarray:
    """One layer without caches, computed in reusable buffers.

    ``Z`` is needed in full for the gather; everything after it runs in row
    blocks.  The result lives in a scratch buffer owned by layer ``idx`` and
    is only valid until the next call for the same layer on this thread.
    """
    n, B, d = H.shape
    m = L.W2.shape[1]
    H2 = H.reshape(n * B, d)
    Z = np.matmul(H2, L.W1, out=ops.buffer(("Z", d), (n * B, d)))
    Z += L.b1
    Z2 = Z.reshape(n, B * d)
    blk = max(1, _TILE_ROWS // B)
    A = ops.buffer(("A", d), (min(blk, n), B * d))
    T = ops.buffer(("T", m), (min(blk, n) * B, m))
    Y = ops.buffer(("Y", idx), (n * B, m))
    W2a, W2b = L.W2[:d], L.W2[d:]
    for lo in range(0, n, blk):
        hi = min(n, lo + blk)
        r = hi - lo
        _max_rows(Z2, ops.indptr, ops.src, ops.p, lo, hi, A)
        Yb = Y[lo * B:hi * B]
        Tb = T[:r * B]
        np.matmul(H2[lo * B:hi * B], W2a, out=Yb)
        np.matmul(A[:r].reshape(r * B, d), W2b, out=Tb)
        Yb += Tb
        Yb += L.b2
        if not np.all(np.isfinite(Yb)):
            raise FloatingPointError("non-finite activation in forward pass")
        np.maximum(Yb, 0.0, out=Yb)
    return Y.reshape(n, B, m)


def _forward(H0: np.ndarray, prev: np.ndarray, ub: np.ndarray, ops: _GraphOps,
             params: ModelParams, keep: bool):
    """``H0`` is ``(n, B, e)``; ``prev`` and ``ub`` are ``(n, B)``."""
    n, B, _ = H0.shape
    cache = _Cache(prev=prev, ub=ub) if keep else None
    H = H0
    for li, L in enumerate(params.layers):
        d = L.d_in
        if not keep:
            H = _layer_infer(H, L, ops, li)
            continue
        Z = (_mm(H, L.W1) + L.b1).reshape(n, B * d)
        A, arg = _max_aggregate(Z, ops.indptr, ops.src, ops.p)
        C = np.concatenate([H, A.reshape(n, B, d)], axis=2)
        Y = _mm(C, L.W2) + L.b2
        if not np.all(np.isfinite(Y)):
            raise FloatingPointError("non-finite activation in forward pass")
        cache.layers.append((H, arg, C, Y))
        H = np.maximum(Y, 0.0)
    raw = H[:, :, 0]
    out = np.minimum(prev + raw, ub)
    if keep:
        cache.raw = raw
    return out, cache


def _backward(dout: np.ndarray, cache: _Cache, ops: _GraphOps, params: ModelParams):
    """Gradients for every layer, in ``LayerParams.arrays()`` order."""
    # min(prev + raw, ub): gradient reaches raw only where it is strictly below ub
    dH = (dout * (cache.prev + cache.raw < cache.ub))[:, :, None]
    grads = []
    for L, (H, arg, C, Y) in zip(reversed(params.layers), reversed(cache.layers)):
        n, B, d = H.shape
        dY = dH * (Y > 0.0)
        dYf = dY.reshape(n * B, -1)
        dW2 = C.reshape(n * B, -1).T @ dYf
        db2 = dYf.sum(axis=0)
        dC = _mm(dY, L.W2.T)
        dHprev = dC[:, :, :d]
        dA = np.ascontiguousarray(dC[:, :, d:]).reshape(n, B * d)
        dZ = _max_aggregate_back(dA, arg, ops.src, ops.p).reshape(n, B, d)
        dZf = dZ.reshape(n * B, d)
        dW1 = H.reshape(n * B, d).T @ dZf
        db1 = dZf.sum(axis=0)
        grads.append((dW1, db1, dW2, db2))
        dH = dHprev + _mm(dZ, L.W1.T)
    grads.reverse()
    return grads


def _prepare(g: DirectedGraph, H: np.ndarray):
    ops = graph_ops(g)
    feats = build_features(H).transpose(1, 0, 2)
    return ops, np.ascontiguousarray(feats), np.ascontiguousarray(H[:, 0, :].T), _upper_bound_batch(H, ops)


def _as_batch(history) -> np.ndarray:
    H = np.asarray(history, dtype=np.float64)
    return H[None] if H.ndim == 2 else H


def forward_step(g: DirectedGraph, history, params: ModelParams) -> np.ndarray:
    """Estimate ``pi_i`` from ``[pi_{i-1}, ..., pi_{i-e}]`` (newest first).

    Guaranteed ``pi_{i-1} <= out <= min(u_i, 1)`` elementwise.
    Accepts one history ``(e, n)`` or a batch ``(B, e, n)``.
    """
    H = _as_batch(history)
    if H.shape[1] != params.e:
        raise ValueError(f"history length {H.shape[1]} does not match e={params.e}")
    if H.shape[2] != g.node_count:
        raise ValueError("history vectors do not match the graph size")
    ops, feats, prev, ub = _prepare(g, H)
    out, _ = _forward(feats, prev, ub, ops, params, False)
    return out[:, 0] if np.asarray(history).ndim == 2 else out.T


def loss(predicted, target, lam: float) -> float:
    """``|pred - target|_1 / |V| + lam * |sum(pred) - sum(target)| / sum(target)``."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("predicted and target lengths differ")
    tot = t.sum()
    return float(np.abs(p - t).sum() / t.size + lam * abs(p.sum() - tot) / tot)


def loss_and_grad(g: DirectedGraph, histories, targets, params: ModelParams):
    """Mean loss over a batch on one graph, and its gradient as a flat vector."""
    H = _as_batch(histories)
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64)).T  # (n, B)
    ops, feats, prev, ub = _prepare(g, H)
    out, cache = _forward(feats, prev, ub, ops, params, True)
    n, B = out.shape
    diff = out - T
    tot = T.sum(axis=0)
    gap = out.sum(axis=0) - tot
    per = np.abs(diff).sum(axis=0) / n + params.lam * np.abs(gap) / tot
    dout = (np.sign(diff) / n + params.lam * np.sign(gap) / tot) / B
    grads = _backward(dout, cache, ops, params)
    return float(per.mean()), np.concatenate([a.ravel() for gr in grads for a in gr])


def tie_margin(g: DirectedGraph, histories, targets, params: ModelParams) -> float:
    """Smallest distance to a non-differentiable point of the loss.

    Covers the max aggregation (gap between best and runner-up message), the
    ReLUs, the output clamp and the absolute values in the loss.  Used to keep
    finite-difference checks away from kinks.
    """
    H = _as_batch(histories)
    T = np.atleast_2d(np.asarray(targets, dtype=np.float64)).T
    ops, feats, prev, ub = _prepare(g, H)
    out, cache = _forward(feats, prev, ub, ops, params, True)
    m = np.inf
    for L, (Hin, _, _, Y) in zip(params.layers, cache.layers):
        n, B, d = Hin.shape
        m = min(m, float(np.abs(Y).min()))
        Z = (Hin @ L.W1 + L.b1).reshape(n, B * d)
        m = min(m, float(_second_gap(Z, ops.indptr, ops.src, ops.p)))
    active = cache.raw > 0
    if active.any():
        m = min(m, float(np.abs(cache.prev + cache.raw - cache.ub)[active].min()))
        m = min(m, float(np.abs(out - T)[active].min()))
    m = min(m, float(np.abs(out.sum(axis=0) - T.sum(axis=0)).min()))
    return m


# ---------------------------------------------------------------------------
# stacking

def initial_history(pi0: np.ndarray, e: int, pad: int = PAD_ZERO) -> np.ndarray:
    """History window ``[pi_0, pi_{-1}, ..., pi_{1-e}]`` for the first stack."""
    H = np.zeros((e, pi0.size)) if pad == PAD_ZERO else np.tile(pi0, (e, 1))
    H[0] = pi0
    return H


def stacked_inference(g: DirectedGraph, seeds, params: ModelParams, s: int | None = None):
    """Apply the step estimator ``s`` times starting from the seed indicator.

    Returns ``(vectors, influence)`` where ``vectors`` holds ``pi_0 .. pi_s``
    and ``influence = sum(pi_s)``.
    """
    s = params.s if s is None else int(s)
    pi0 = seed_indicator(seeds, g.node_count)[None]
    vecs = _stack(g, pi0, params, s)
    return np.stack([v[0] for v in vecs]), float(vecs[-1][0].sum())


@njit(cache=True, nogil=True)
def _step_inputs(H, indptr, src, p, feats, ub):
    """Features and upper bound for a ``(B, e, n)`` history, written in place.

    Same values as ``build_features`` and ``_upper_bound_batch``; returns the
    most negative history delta so callers can reject non-monotone input.
    """
    B, e, n = H.shape
    worst = 0.0
    for b in range(B):
        for v in range(n):
            for j in range(e - 1):
                d = H[b, e - 2 - j, v] - H[b, e - 1 - j, v]
                feats[v, b, j] = d
                if d < worst:
                    worst = d
            feats[v, b, e - 1] = H[b, 0, v]
            acc = 0.0
            for k in range(indptr[v], indptr[v + 1]):
                u = src[k]
                acc += p[k] * (H[b, 0, u] - H[b, 1, u])
            x = H[b, 0, v] + acc
            ub[v, b] = x if x < 1.0 else 1.0
    return worst


def _stack(g: DirectedGraph, pi0: np.ndarray, params: ModelParams, s: int) -> list[np.ndarray]:
    ops = graph_ops(g)
    B, n = pi0.shape
    e = params.e
    H = np.stack([initial_history(x, e, params.pad) for x in pi0])
    feats = ops.buffer("feats", (n, B, e))
    ub = ops.buffer("ub", (n, B))
    vecs = [pi0]
    for _ in range(s):
        if _step_inputs(H, ops.indptr, ops.src, ops.p, feats, ub) < -1e-9:
            raise ValueError("history is not monotone: infection probability decreased")
        nxt = np.ascontiguousarray(_forward(feats, H[:, 0, :].T, ub, ops, params, False)[0].T)
        vecs.append(nxt)
        H[:, 1:, :] = H[:, :-1, :].copy()
        H[:, 0, :] = nxt
    return vecs


def stacked_influences(g: DirectedGraph, seed_sets, params: ModelParams, s_values) -> dict[int, np.ndarray]:
    """Influence after each requested stack count for a batch of seed sets."""
    s_values = list(s_values)
    pi0 = np.stack([seed_indicator(x, g.node_count) for x in seed_sets])
    vecs = _stack(g, pi0, params, max(s_values))
    return {s: vecs[s].sum(axis=1) for s in s_values}


# ---------------------------------------------------------------------------
# checkpoint

_CKPT_MAGIC = b"MNST"
_CKPT_VERSION = 1


def save_model(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IIIIdI", _CKPT_VERSION, params.e, params.l, params.s,
                             params.lam, params.pad))
        fh.write(struct.pack(f"<{len(params.dims)}I", *params.dims))
        for L in params.layers:
            for a in L.arrays():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_model(path, expect: ModelParams | None = None) -> ModelParams:
    """Read a checkpoint; with ``expect``, refuse mismatched e / l / dims."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    head = struct.calcsize("<IIIIdI")
    version, e, l, s, lam, pad = struct.unpack_from("<IIIIdI", data, 4)  # noqa: E741
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 4 + head
    dims = struct.unpack_from(f"<{l + 1}I", data, off)
    off += 4 * (l + 1)
    if expect is not None and (e, l, tuple(dims)) != (expect.e, expect.l, tuple(expect.dims)):
        raise ValueError(f"{path}: checkpoint shape (e={e}, l={l}, dims={dims}) does not match "
                         f"(e={expect.e}, l={expect.l}, dims={expect.dims})")
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        arrs = []
        for shape in ((a, a), (a,), (2 * a, b), (b,)):
            cnt = int(np.prod(shape))
            arrs.append(np.frombuffer(data, "<f8", cnt, off).reshape(shape).astype(np.float64))
            off += 8 * cnt
        layers.append(LayerParams(*arrs))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(e, s, lam, tuple(dims), pad, layers)
