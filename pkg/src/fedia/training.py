"""Client-side round simulation: local SGD with momentum and the upload.

Clients are stateless across rounds: the momentum buffer starts at zero
every round. The uploaded gradient is the mean of the raw task-loss
gradients observed at the visited iterates; weight decay, momentum and the
proximal term shape the trajectory but never enter the upload.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import Graph
from .models import ModelConfig, loss_and_grad
from .params import ParameterVector, check_same_manifest


class TrainingDiverged(RuntimeError):
    """Local training hit a non-finite loss."""


@dataclass(frozen=True)
class LocalOptConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5
    local_iterations: int = 5
    prox_mu: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0 or self.prox_mu < 0:
            raise ValueError("weight_decay and prox_mu must be >= 0")
        if self.local_iterations < 1:
            raise ValueError("local_iterations must be >= 1")


@dataclass(frozen=True)
class ClientUpdate:
    """One client's per-round upload plus bookkeeping for cross-checks."""

    client_id: int
    gradient: ParameterVector
    sample_count: int
    local_loss: float
    final_weights: ParameterVector


def local_train(
    w_global: ParameterVector,
    graph: Graph,
    model: ModelConfig,
    opt: LocalOptConfig,
    client_id: int = 0,
    seed: int = 0,
) -> ClientUpdate:
    """Run the configured number of full-batch SGD steps from ``w_global``.

    ``seed`` is accepted for interface stability; full-batch training has no
    sampling, so the result depends only on (w_global, graph, configs).
    """
    del seed
    w = w_global.values.copy()
    anchor = w_global.values
    velocity = np.zeros_like(w)
    grad_sum = np.zeros_like(w)
    loss_sum = 0.0
    for iteration in range(opt.local_iterations):
        loss, grad = loss_and_grad(w_global.with_values(w), graph, model, "train")
        if not np.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss at local iteration {iteration} (client {client_id})"
            )
        grad_sum += grad.values
        loss_sum += loss
        step = grad.values.copy()
        if opt.weight_decay:
            step += opt.weight_decay * w
        if opt.prox_mu:
            step += opt.prox_mu * (w - anchor)
        velocity = opt.momentum * velocity + step
        w = w - opt.learning_rate * velocity
    e = opt.local_iterations
    return ClientUpdate(
        client_id=client_id,
        gradient=w_global.with_values(grad_sum / e),
        sample_count=int(graph.train_mask.sum()),
        local_loss=loss_sum / e,
        final_weights=w_global.with_values(w),
    )


def pseudo_gradient(
    w_global: ParameterVector, w_local: ParameterVector, learning_rate: float
) -> ParameterVector:
    """Server-side gradient reconstruction from a weight delta.

    Returns (w_global - w_local) / learning_rate; exactly the uploaded
    gradient only for a single plain SGD step.
    """
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    check_same_manifest(w_global, w_local)
    return w_global.with_values((w_global.values - w_local.values) / learning_rate)
