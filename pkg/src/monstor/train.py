"""Mini-batch training of the step estimator and selection of the stack count."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .cascade import TrainingTuple, random_seed_set, simulate
from .graph import DirectedGraph
from .metrics import pearson
from .model import ModelParams, _forward, _prepare, loss_and_grad, stacked_influences
from .rng import derive_seed

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    seed: int = 7
    val_frac: float = 0.2
    optimizer: str = "adam"
    hidden: int = 16
    layers: int = 3
    lam: float = 0.3
    pad: str = "zero"
    s_max: int = 8
    val_sets_per_graph: int = 50
    val_runs: int = 10_000


@dataclass(frozen=True)
class ValidationSet:
    graph_id: str
    seeds: tuple[int, ...]
    influence: float


def learning_rate(epoch: int) -> float:
    """``1e-4 * t`` for the first ten epochs, ``1e-2 / t`` afterwards (1-indexed)."""
    if epoch < 1:
        raise ValueError("epochs are 1-indexed")
    return 1e-4 * epoch if epoch <= 10 else 1e-2 / epoch


class _Adam:
    def __init__(self, size, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.b1, self.b2, self.eps = b1, b2, eps

    def step(self, grad, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return lr * mh / (np.sqrt(vh) + self.eps)


class _SGD:
    def step(self, grad, lr):
        return lr * grad


def _batches(tuples: Sequence[TrainingTuple], order: np.ndarray, size: int):
    """Yield index batches, each split into per-graph groups."""
    for k in range(0, order.size, size):
        chunk = order[k:k + size]
        groups: dict[str, list[int]] = {}
        for j in chunk:
            groups.setdefault(tuples[j].graph_id, []).append(int(j))
        yield [(gid, groups[gid]) for gid in sorted(groups)]


def _group_arrays(tuples, idx):
    H = np.stack([tuples[j].history for j in idx])
    T = np.stack([tuples[j].target for j in idx])
    return H, T


def _output_alive(params: ModelParams, tuples, graphs, probe: int = 64) -> bool:
    """True when some probed node with room below its bound gets a positive output."""
    by_graph: dict[str, list[int]] = {}
    for j, t in enumerate(tuples[:probe]):
        by_graph.setdefault(t.graph_id, []).append(j)
    for gid, idx in by_graph.items():
        H, _ = _group_arrays(tuples, idx)
        ops, feats, prev, ub = _prepare(graphs[gid], H)
        _, cache = _forward(feats, prev, ub, ops, params, True)
        if np.any((cache.raw > 0) & (prev + cache.raw < ub)):
            return True
    return False


def _initial_params(cfg: TrainConfig, e: int, tuples, graphs, attempts: int = 20) -> ModelParams:
    # The output unit sits behind a ReLU and the clamp blocks gradient where it
    # binds; a draw that is zero on every unclamped node never trains, so redraw.
    draws = [ModelParams.init(e=e, hidden=cfg.hidden, l=cfg.layers, lam=cfg.lam,
                              seed=derive_seed(cfg.seed, 1, a), pad=cfg.pad) for a in range(attempts)]
    for params in draws:
        if _output_alive(params, tuples, graphs):
            return params
    log.warning("no initialisation in %d draws has a live output; using the first", attempts)
    return draws[0]


def dataset_loss(tuples: Sequence[TrainingTuple], graphs: Mapping[str, DirectedGraph],
                 params: ModelParams, chunk: int = 64) -> float:
    """Mean per-tuple loss over a dataset."""
    if not tuples:
        return float("nan")
    total = 0.0
    order = np.arange(len(tuples))
    for groups in _batches(tuples, order, chunk):
        for gid, idx in groups:
            H, T = _group_arrays(tuples, idx)
            val, _ = loss_and_grad(graphs[gid], H, T, params)
            total += val * len(idx)
    return total / len(tuples)


def split_tuples(tuples: Sequence[TrainingTuple], val_frac: float, seed: int):
    """Random train/validation split of a tuple list."""
    n = len(tuples)
    n_val = int(round(val_frac * n)) if n > 1 else 0
    perm = np.random.default_rng(derive_seed(seed, 11)).permutation(n)
    val = sorted(perm[:n_val].tolist())
    tr = sorted(perm[n_val:].tolist())
    return [tuples[i] for i in tr], [tuples[i] for i in val]


def make_validation_sets(graphs: Mapping[str, DirectedGraph], per_graph: int, runs: int,
                         seed: int) -> list[ValidationSet]:
    out = []
    for gi, gid in enumerate(sorted(graphs)):
        g = graphs[gid]
        rng = np.random.default_rng(derive_seed(seed, 21, gi))
        for j in range(per_graph):
            seeds = random_seed_set(rng, g.node_count, max(1, g.node_count // 50))
            res = simulate(g, seeds, runs, derive_seed(seed, 22, gi, j))
            out.append(ValidationSet(gid, tuple(int(x) for x in seeds), res.influence))
    return out


def select_stack_count(params: ModelParams, graphs: Mapping[str, DirectedGraph],
                       val_sets: Sequence[ValidationSet], s_max: int = 8) -> tuple[int, dict[int, float]]:
    """Pick ``s`` in ``1..s_max`` with the best validation Pearson (ties: smaller s)."""
    s_values = list(range(1, s_max + 1))
    est = {s: [] for s in s_values}
    truth = []
    by_graph: dict[str, list[ValidationSet]] = {}
    for v in val_sets:
        by_graph.setdefault(v.graph_id, []).append(v)
    for gid in sorted(by_graph):
        vs = by_graph[gid]
        infl = stacked_influences(graphs[gid], [list(v.seeds) for v in vs], params, s_values)
        for s in s_values:
            est[s].extend(infl[s].tolist())
        truth.extend(v.influence for v in vs)
    scores = {}
    for s in s_values:
        try:
            scores[s] = pearson(truth, est[s])
        except ValueError:
            scores[s] = float("-inf")
    best = max(s_values, key=lambda s: (scores[s], -s))
    return best, scores


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    s_scores: dict[int, float]


def train(tuples: Sequence[TrainingTuple], graphs: Mapping[str, DirectedGraph],
          config: TrainConfig | None = None,
          val_tuples: Sequence[TrainingTuple] | None = None,
          val_sets: Sequence[ValidationSet] | None = None,
          init: ModelParams | None = None) -> tuple[ModelParams, TrainReport]:
    """Fit the step estimator and choose the stack count.

    Without explicit ``val_tuples`` a ``config.val_frac`` share of ``tuples``
    is held out; the epoch with the lowest validation loss is kept.  The stack
    count is chosen on ``val_sets`` (seed sets with MC influence), which are
    simulated on the training graphs when not supplied.
    """
    cfg = config or TrainConfig()
    if not tuples:
        raise ValueError("no training tuples")
    missing = {t.graph_id for t in tuples} - set(graphs)
    if missing:
        raise KeyError(f"unresolved graph ids: {sorted(missing)}")
    if val_tuples is None:
        tuples, val_tuples = split_tuples(tuples, cfg.val_frac, cfg.seed)
    e = tuples[0].e
    params = init.copy() if init is not None else _initial_params(cfg, e, tuples, graphs)
    if params.e != e:
        raise ValueError(f"model e={params.e} does not match tuples e={e}")
    opt = _Adam(params.size) if cfg.optimizer == "adam" else _SGD()
    rng = np.random.default_rng(derive_seed(cfg.seed, 2))
    x = params.flat()
    best_x, best_val, best_epoch = x.copy(), np.inf, 0
    hist_tr, hist_val = [], []
    for epoch in range(1, cfg.epochs + 1):
        lr = learning_rate(epoch)
        order = rng.permutation(len(tuples))
        seen, acc = 0, 0.0
        for groups in _batches(tuples, order, cfg.batch_size):
            nb = sum(len(idx) for _, idx in groups)
            grad = np.zeros_like(x)
            for gid, idx in groups:
                H, T = _group_arrays(tuples, idx)
                val, gr = loss_and_grad(graphs[gid], H, T, params)
                grad += gr * (len(idx) / nb)
                acc += val * len(idx)
            if not np.isfinite(acc) or not np.all(np.isfinite(grad)):
                raise FloatingPointError(f"non-finite loss or gradient at epoch {epoch}")
            seen += nb
            x = x - opt.step(grad, lr)
            params.set_flat(x)
        tr_loss = acc / seen
        v_loss = dataset_loss(val_tuples, graphs, params) if val_tuples else tr_loss
        hist_tr.append(tr_loss)
        hist_val.append(v_loss)
        log.info("epoch %d lr %.2e train %.6f val %.6f", epoch, lr, tr_loss, v_loss)
        if v_loss < best_val:
            best_val, best_x, best_epoch = v_loss, x.copy(), epoch
    params.set_flat(best_x)
    if val_sets is None:
        val_sets = make_validation_sets({gid: graphs[gid] for gid in sorted({t.graph_id for t in tuples})},
                                        cfg.val_sets_per_graph, cfg.val_runs, derive_seed(cfg.seed, 3))
    scores: dict[int, float] = {}
    if val_sets:
        params.s, scores = select_stack_count(params, graphs, val_sets, cfg.s_max)
    return params, TrainReport(hist_tr, hist_val, best_epoch, scores)
