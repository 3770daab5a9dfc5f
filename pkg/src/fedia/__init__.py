"""Deterministic simulator for importance-aware federated graph learning."""

__version__ = "0.1.0"

from .aggregation import (
    AggregationResult,
    AggregationState,
    aggregate_fedavg,
    aggregate_fedia,
    apply_update,
    global_importance,
    influence_weights,
    initial_state,
    irm_update,
    mask_drift,
    top_ratio_mask,
)
from .graphs import (
    Graph,
    PartitionPlan,
    generate_synthetic_domains,
    induced_subgraph,
    load_dataset,
    load_domain,
    partition_domain,
    save_domain,
    split_nodes,
)
from .models import (
    Backbone,
    ForwardMode,
    ModelConfig,
    accuracy,
    forward,
    init_params,
    loss_and_grad,
)
from .orchestrator import (
    ClientData,
    ExperimentConfig,
    RoundMetrics,
    Strategy,
    run_experiment,
    run_round,
    summarize,
)
from .params import ParameterVector, flatten, unflatten
from .training import ClientUpdate, LocalOptConfig, local_train, pseudo_gradient

__all__ = [
    "AggregationResult",
    "AggregationState",
    "Backbone",
    "ClientData",
    "ClientUpdate",
    "ExperimentConfig",
    "ForwardMode",
    "Graph",
    "LocalOptConfig",
    "ModelConfig",
    "ParameterVector",
    "PartitionPlan",
    "RoundMetrics",
    "Strategy",
    "accuracy",
    "aggregate_fedavg",
    "aggregate_fedia",
    "apply_update",
    "flatten",
    "forward",
    "generate_synthetic_domains",
    "global_importance",
    "induced_subgraph",
    "influence_weights",
    "init_params",
    "initial_state",
    "irm_update",
    "load_dataset",
    "load_domain",
    "local_train",
    "loss_and_grad",
    "mask_drift",
    "partition_domain",
    "pseudo_gradient",
    "run_experiment",
    "run_round",
    "save_domain",
    "split_nodes",
    "summarize",
    "top_ratio_mask",
    "unflatten",
]
