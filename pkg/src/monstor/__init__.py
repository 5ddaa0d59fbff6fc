"""Influence estimation under the Independent Cascade model with a stacked GCN surrogate."""

__version__ = "0.1.0"

from .cascade import (SimulationResult, TrainingTuple, exact_influence, generate_tuples,  # noqa: E402
                      load_tuples, save_tuples, simulate)
from .graph import (DirectedGraph, GraphFormatError, assign_weighted_cascade, from_edges,  # noqa: E402
                    generate_rmat, load_edge_list, propagate, write_edge_list)
from .im import (ExactInfluence, FunctionInfluence, InfluenceFunction, MCInfluence,  # noqa: E402
                 SurrogateInfluence, greedy_select, lazy_greedy_select, maximize_with_surrogate)
from .metrics import pearson, spearman  # noqa: E402
from .model import (ModelParams, build_features, forward_step, load_model, loss,  # noqa: E402
                    save_model, stacked_inference, upper_bound)
from .probs import ActionLog, build_bt, build_ji, build_lp, read_action_log  # noqa: E402
from .train import TrainConfig, train  # noqa: E402

__all__ = [
    "ActionLog", "DirectedGraph", "ExactInfluence", "FunctionInfluence", "GraphFormatError",
    "InfluenceFunction", "MCInfluence", "ModelParams", "SimulationResult", "SurrogateInfluence",
    "TrainConfig", "TrainingTuple", "assign_weighted_cascade", "build_bt", "build_features",
    "build_ji", "build_lp", "exact_influence", "forward_step", "from_edges", "generate_rmat",
    "generate_tuples", "greedy_select", "lazy_greedy_select", "load_edge_list", "load_model",
    "load_tuples", "loss", "maximize_with_surrogate", "pearson", "propagate", "read_action_log",
    "save_model", "save_tuples", "simulate", "spearman", "stacked_inference", "train",
    "upper_bound", "write_edge_list",
]
