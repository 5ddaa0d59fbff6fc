import numpy as np
import pytest

from monstor.cascade import TrainingTuple, generate_tuples
from monstor.graph import assign_weighted_cascade, generate_rmat
from monstor.model import ModelParams
from monstor.train import (TrainConfig, ValidationSet, dataset_loss, learning_rate,
                           select_stack_count, split_tuples, train)


@pytest.fixture(scope="module")
def fixture_data():
    g = assign_weighted_cascade(generate_rmat(9, seed=4))
    tuples = generate_tuples(g, 100, e=4, runs=500, master_seed=3, graph_id="g")
    return {"g": g}, tuples


def test_learning_rate_schedule():
    assert [learning_rate(t) for t in (1, 5, 10)] == [1e-4, 5e-4, 1e-3]
    assert learning_rate(11) == 1e-2 / 11 and learning_rate(100) == 1e-4
    with pytest.raises(ValueError):
        learning_rate(0)


def test_converged_tuple_has_zero_loss(fixture_data):
    graphs, tuples = fixture_data
    pi = tuples[-1].target
    t = TrainingTuple(9, pi.copy(), np.tile(pi, (4, 1)), "g")
    params, rep = train([t], graphs, TrainConfig(epochs=2, val_sets_per_graph=0), val_tuples=[t])
    assert rep.train_loss[0] == 0.0 and rep.val_loss == [0.0, 0.0]


def test_loss_decreases(fixture_data):
    graphs, tuples = fixture_data
    params, rep = train(tuples, graphs, TrainConfig(epochs=15, val_sets_per_graph=5, val_runs=300))
    assert rep.train_loss[-1] < rep.train_loss[0]
    assert min(rep.val_loss) == rep.val_loss[rep.best_epoch - 1]
    assert 1 <= params.s <= 8 and set(rep.s_scores) == set(range(1, 9))


def test_sgd_runs(fixture_data):
    graphs, tuples = fixture_data
    _, rep = train(tuples, graphs, TrainConfig(epochs=3, optimizer="sgd", val_sets_per_graph=0))
    assert all(np.isfinite(rep.train_loss))


def test_deterministic(fixture_data):
    graphs, tuples = fixture_data
    cfg = TrainConfig(epochs=3, val_sets_per_graph=3, val_runs=200)
    a, _ = train(tuples, graphs, cfg)
    b, _ = train(tuples, graphs, cfg)
    assert a.flat().tobytes() == b.flat().tobytes() and a.s == b.s


def test_errors(fixture_data):
    graphs, tuples = fixture_data
    with pytest.raises(ValueError, match="no training tuples"):
        train([], graphs)
    with pytest.raises(KeyError, match="unresolved"):
        train(tuples, {})
    bad = ModelParams.init(seed=0)
    bad.layers[0].W1[:] = np.nan
    with pytest.raises(FloatingPointError):
        train(tuples, graphs, TrainConfig(epochs=1, val_sets_per_graph=0), init=bad)


def test_split_and_dataset_loss(fixture_data):
    graphs, tuples = fixture_data
    tr, va = split_tuples(tuples, 0.2, 7)
    assert len(va) == 20 and len(tr) == 80
    assert {id(t) for t in tr}.isdisjoint({id(t) for t in va})
    assert dataset_loss([], graphs, ModelParams.init()) != dataset_loss([], graphs, ModelParams.init())
    assert dataset_loss(va, graphs, ModelParams.zeros()) > 0


def test_stack_selection_prefers_best_correlation(fixture_data):
    graphs, _ = fixture_data
    g = graphs["g"]
    p = ModelParams.zeros(s=1)  # every stack count predicts |S|
    sets = [ValidationSet("g", (0,), 1.0), ValidationSet("g", (1, 2), 2.0),
            ValidationSet("g", (3, 4, 5), 3.0)]
    s, scores = select_stack_count(p, {"g": g}, sets, 4)
    assert s == 1 and all(v == pytest.approx(1.0) for v in scores.values())


def test_dead_initialisation_is_redrawn(fixture_data):
    from monstor.rng import derive_seed
    from monstor.train import _initial_params, _output_alive
    graphs, tuples = fixture_data
    firsts = {s: ModelParams.init(seed=derive_seed(s, 1, 0)) for s in range(40)}
    dead = [s for s, p in firsts.items() if not _output_alive(p, tuples, graphs)]
    assert dead, "expected some first draws with no live output"
    for s in dead[:3]:
        assert _output_alive(_initial_params(TrainConfig(seed=s), 4, tuples, graphs), tuples, graphs)
