"""Distributed iterative hard thresholding on a simulated message-passing network."""
from .aggregate import concurrent_group_sums, group_sum
from .distributed import RunResult, diht_run, equivalence_check, naive_diht_run
from .errors import (ConfigError, DivergenceError, GenerationError, InvalidArgument,
                     NumericError, ProtocolError)
from .netsim import (AsyncDelivery, SyncDelivery, Topology, build_broadcast_trees,
                     make_er_topology, make_geometric_topology)
from .recovery import (RecoveryProblem, centralized_iht, generate_problem, hard_threshold,
                       load_problem, max_step_size, save_problem)
from .topk import brute_force_topk, build_sorted_list, data_topk, ta_topk

__version__ = "0.1.0"

__all__ = [
    "AsyncDelivery", "ConfigError", "DivergenceError", "GenerationError", "InvalidArgument",
    "NumericError", "ProtocolError", "RecoveryProblem", "RunResult", "SyncDelivery",
    "Topology", "brute_force_topk", "build_broadcast_trees", "build_sorted_list",
    "centralized_iht", "concurrent_group_sums", "data_topk", "diht_run", "equivalence_check",
    "generate_problem", "group_sum", "hard_threshold", "load_problem", "make_er_topology",
    "make_geometric_topology", "max_step_size", "naive_diht_run", "save_problem", "ta_topk",
]
