"""Round loop for the simulated federation.

Every round broadcasts the global weights, runs each client's local
training (optionally in a thread pool), aggregates the uploads in
client-id order, applies the server step, and evaluates the new model on
every client's test and validation masks. All reductions are ordered, so
results are bit-identical across parallelism degrees.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .aggregation import (
    AggregationResult,
    AggregationState,
    aggregate_fedavg,
    aggregate_fedia,
    apply_update,
    initial_state,
)
from .graphs import Graph
from .models import ModelConfig, accuracy, evaluation_loss, init_params
from .params import ParameterVector
from .training import ClientUpdate, LocalOptConfig, TrainingDiverged, local_train

THREADS_ENV_VAR = "FEDIA_THREADS"


class Strategy(str, Enum):
    FEDAVG = "fedavg"
    FEDPROX = "fedprox"
    FEDIA = "fedia"
    FEDIA_P = "fedia_p"

    @property
    def uses_mask(self) -> bool:
        return self in (Strategy.FEDIA, Strategy.FEDIA_P)


@dataclass(frozen=True)
class ClientData:
    client_id: int
    domain_id: int
    graph: Graph


@dataclass(frozen=True)
class ExperimentConfig:
    clients: tuple[ClientData, ...]
    model: ModelConfig
    local_opt: LocalOptConfig
    strategy: Strategy
    fedia_base: Strategy = Strategy.FEDAVG
    rounds: int = 200
    server_lr: float | None = None
    rho: float = 0.1
    lam: float = 1.0
    beta: float = 0.0
    seed: int = 0
    summarize_last: int = 20

    def __post_init__(self) -> None:
        if not self.clients:
            raise ValueError("need at least one client")
        ids = [c.client_id for c in self.clients]
        if ids != sorted(set(ids)):
            raise ValueError("client ids must be unique and sorted")
        if self.rounds < 0 or self.summarize_last < 0:
            raise ValueError("rounds and summarize_last must be >= 0")
        if self.rounds < self.summarize_last:
            raise ValueError("rounds must be >= summarize_last")
        if self.fedia_base not in (Strategy.FEDAVG, Strategy.FEDPROX):
            raise ValueError("fedia_base must be fedavg or fedprox")
        prox_expected = self.strategy is Strategy.FEDPROX or (
            self.strategy.uses_mask and self.fedia_base is Strategy.FEDPROX
        )
        if prox_expected and self.local_opt.prox_mu <= 0:
            raise ValueError("proximal strategies require prox_mu > 0")
        if not prox_expected and self.local_opt.prox_mu != 0:
            raise ValueError("prox_mu must be 0 unless a proximal strategy is selected")

    @property
    def effective_server_lr(self) -> float:
        return self.local_opt.learning_rate if self.server_lr is None else self.server_lr

    @property
    def domain_ids(self) -> tuple[int, ...]:
        return tuple(sorted({c.domain_id for c in self.clients}))


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    per_domain_test_accuracy: dict[int, float]
    mean_val_loss: float
    mean_train_loss: float
    drift: float
    weights: np.ndarray
    global_grad_l2: float


@dataclass(frozen=True)
class RoundTrace:
    """Extra per-round detail handed to an observer callback."""

    round: int
    mask: np.ndarray | None
    weights: np.ndarray
    drift: float
    global_gradient: ParameterVector
    weights_before: ParameterVector
    weights_after: ParameterVector


@dataclass
class ServerState:
    weights: ParameterVector
    aggregation: AggregationState | None
    round: int = 0


Observer = Callable[[RoundTrace], None]


def _thread_count(max_workers: int | None) -> int:
    if max_workers is not None:
        return max(1, max_workers)
    return max(1, int(os.environ.get(THREADS_ENV_VAR, "1")))


def _collect_updates(
    weights: ParameterVector, config: ExperimentConfig, round_index: int, workers: int
) -> list[ClientUpdate]:
    def run_client(client: ClientData) -> ClientUpdate:
        try:
            return local_train(
                weights, client.graph, config.model, config.local_opt, client.client_id
            )
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"round {round_index}: {exc}") from exc

    if workers == 1:
        return [run_client(c) for c in config.clients]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_client, config.clients))


def init_server_state(config: ExperimentConfig) -> ServerState:
    aggregation = (
        initial_state(len(config.clients), config.rho, config.lam, config.beta)
        if config.strategy.uses_mask
        else None
    )
    return ServerState(weights=init_params(config.model), aggregation=aggregation)


def run_round(
    state: ServerState,
    config: ExperimentConfig,
    observer: Observer | None = None,
    max_workers: int | None = None,
) -> tuple[ServerState, RoundMetrics]:
    """Execute one communication round and evaluate the updated model."""
    workers = _thread_count(max_workers)
    updates = _collect_updates(state.weights, config, state.round, workers)
    grads = [u.gradient for u in updates]
    counts = [u.sample_count for u in updates]

    if config.strategy.uses_mask:
        result, new_agg = aggregate_fedia(
            grads, counts, state.aggregation, stage2_enabled=config.strategy is Strategy.FEDIA
        )
    else:
        global_grad = aggregate_fedavg(grads, counts)
        weights = np.asarray(counts, dtype=np.float64)
        result = AggregationResult(
            global_gradient=global_grad,
            mask=np.ones(global_grad.size),
            weights=weights / weights.sum(),
            drift=0.0,
        )
        new_agg = None

    new_weights = apply_update(state.weights, result.global_gradient, config.effective_server_lr)

    per_domain: dict[int, list[float]] = {d: [] for d in config.domain_ids}
    val_losses = []
    for client in config.clients:
        per_domain[client.domain_id].append(
            accuracy(new_weights, client.graph, config.model, "test")
        )
        val_losses.append(evaluation_loss(new_weights, client.graph, config.model, "val"))

    metrics = RoundMetrics(
        round=state.round,
        per_domain_test_accuracy={d: float(np.mean(v)) for d, v in per_domain.items()},
        mean_val_loss=float(np.mean(val_losses)),
        mean_train_loss=float(np.mean([u.local_loss for u in updates])),
        drift=result.drift,
        weights=result.weights,
        global_grad_l2=float(np.linalg.norm(result.global_gradient.values)),
    )
    if observer is not None:
        observer(
            RoundTrace(
                round=state.round,
                mask=result.mask if config.strategy.uses_mask else None,
                weights=result.weights,
                drift=result.drift,
                global_gradient=result.global_gradient,
                weights_before=state.weights,
                weights_after=new_weights,
            )
        )
    return ServerState(weights=new_weights, aggregation=new_agg, round=state.round + 1), metrics


def run_experiment(
    config: ExperimentConfig,
    observer: Observer | None = None,
    max_workers: int | None = None,
    on_round: Callable[[RoundMetrics], None] | None = None,
) -> list[RoundMetrics]:
    """Run all configured rounds and return the per-round metrics."""
    state = init_server_state(config)
    metrics: list[RoundMetrics] = []
    for _ in range(config.rounds):
        state, round_metrics = run_round(state, config, observer, max_workers)
        metrics.append(round_metrics)
        if on_round is not None:
            on_round(round_metrics)
    return metrics


@dataclass(frozen=True)
class DomainStat:
    mean: float
    std: float


@dataclass(frozen=True)
class ExperimentSummary:
    per_domain: dict[int, DomainStat]
    avg_mean: float
    avg_std: float
    last_n: int


def summarize(metrics: list[RoundMetrics], last_n: int) -> ExperimentSummary:
    """Per-domain mean and population std over the final ``last_n`` rounds.

    The AVG row is the unweighted mean of the domain means; its std is the
    population std of the per-round across-domain average.
    """
    if last_n > len(metrics):
        raise ValueError("last_n exceeds the number of recorded rounds")
    if last_n < 1:
        raise ValueError("last_n must be >= 1")
    tail = metrics[-last_n:]
    domains = sorted(tail[0].per_domain_test_accuracy)
    per_domain = {}
    for d in domains:
        series = np.array([m.per_domain_test_accuracy[d] for m in tail])
        per_domain[d] = DomainStat(mean=float(series.mean()), std=float(series.std()))
    avg_series = np.array(
        [np.mean([m.per_domain_test_accuracy[d] for d in domains]) for m in tail]
    )
    return ExperimentSummary(
        per_domain=per_domain,
        avg_mean=float(np.mean([per_domain[d].mean for d in domains])),
        avg_std=float(avg_series.std()),
        last_n=last_n,
    )
