"""Server-side aggregation: FedAvg and the two-stage importance-aware pipeline.

Stage 1 keeps only the top-rho fraction of coordinates ranked by the mean
absolute gradient across clients. Stage 2 multiplicatively down-weights
clients whose masked gradient strays from the masked mean, with optional EMA
smoothing of the weights (beta = 0 recovers the plain multiplicative rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .params import ParameterVector, check_same_manifest


@dataclass(frozen=True)
class AggregationState:
    """Server memory carried across rounds: client weights and last mask."""

    alpha: np.ndarray
    rho: float
    lam: float
    beta: float
    mask_prev: np.ndarray | None = None
    round: int = 0

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=np.float64)
        object.__setattr__(self, "alpha", alpha)
        if np.any(alpha <= 0):
            raise ValueError("all client weights must stay positive")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must be in (0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must be in [0, 1)")


def initial_state(num_clients: int, rho: float, lam: float, beta: float) -> AggregationState:
    if num_clients < 1:
        raise ValueError("need at least one client")
    return AggregationState(alpha=np.full(num_clients, 1.0 / num_clients), rho=rho, lam=lam, beta=beta)


@dataclass(frozen=True)
class AggregationResult:
    global_gradient: ParameterVector
    mask: np.ndarray
    weights: np.ndarray
    drift: float


def global_importance(grads: list[ParameterVector]) -> np.ndarray:
    """Componentwise mean of absolute gradients across clients."""
    if not grads:
        raise ValueError("no gradients to aggregate")
    stacked = np.stack([np.abs(g.values) for g in grads])
    return stacked.mean(axis=0)


def top_ratio_mask(importance: np.ndarray, rho: float) -> np.ndarray:
    """Binary mask keeping the ceil(rho * d) largest coordinates.

    Ties break toward the lower index so the mask is a deterministic
    function of the importance vector.
    """
    if not 0 < rho <= 1:
        raise ValueError("rho must be in (0, 1]")
    importance = np.asarray(importance, dtype=np.float64)
    d = importance.size
    if d < 1:
        raise ValueError("importance vector is empty")
    k = math.ceil(rho * d)
    # Stable sort on -value keeps lower indices first among ties.
    order = np.argsort(-importance, kind="stable")
    mask = np.zeros(d, dtype=np.float64)
    mask[order[:k]] = 1.0
    return mask


def influence_weights(
    alpha: np.ndarray, distances: np.ndarray, lam: float, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Weight update from per-client deviation distances.

    Applies the multiplicative exp(-lam * d_k) rule, then an EMA with factor
    beta (beta = 0 is the plain multiplicative update); weights are
    renormalized to sum 1, which leaves the normalized weights unchanged and
    prevents underflow over long runs. Returns (new alpha, weights); they
    coincide after normalization.
    """
    distances = np.asarray(distances, dtype=np.float64)
    if not np.all(np.isfinite(distances)):
        raise ValueError("non-finite gradient deviation")
    raw = alpha * np.exp(-lam * distances)
    smoothed = beta * alpha + (1.0 - beta) * raw
    normalized = smoothed / smoothed.sum()
    return normalized, normalized


def irm_update(
    masked_grads: list[np.ndarray], alpha: np.ndarray, lam: float, beta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Influence-regularised momentum weighting over masked gradients.

    Each client's distance is the L2 deviation of its masked gradient from
    the unweighted masked mean.
    """
    stacked = np.stack(masked_grads)
    mean = stacked.mean(axis=0)
    distances = np.linalg.norm(stacked - mean, axis=1)
    return influence_weights(alpha, distances, lam, beta)


def aggregate_fedavg(grads: list[ParameterVector], sample_counts: list[int]) -> ParameterVector:
    """Sample-count-weighted mean of client gradients."""
    if not grads:
        raise ValueError("no gradients to aggregate")
    if len(grads) != len(sample_counts):
        raise ValueError("one sample count per gradient required")
    counts = np.asarray(sample_counts, dtype=np.float64)
    weights = counts / counts.sum()
    out = np.zeros_like(grads[0].values)
    for w, g in zip(weights, grads):
        check_same_manifest(grads[0], g)
        out += w * g.values
    return grads[0].with_values(out)


def aggregate_fedia(
    grads: list[ParameterVector],
    sample_counts: list[int],
    state: AggregationState,
    stage2_enabled: bool = True,
) -> tuple[AggregationResult, AggregationState]:
    """Full importance-aware aggregation round.

    Computes the importance vector and top-rho mask, masks every gradient,
    then weights clients either by influence-regularised momentum (stage 2)
    or, for the projection-only ablation, by sample counts.
    """
    if not grads:
        raise ValueError("no gradients to aggregate")
    if len(grads) != state.alpha.size:
        raise ValueError("state was initialized for a different client count")
    for g in grads[1:]:
        check_same_manifest(grads[0], g)

    importance = global_importance(grads)
    mask = top_ratio_mask(importance, state.rho)
    masked = [g.values * mask for g in grads]

    if stage2_enabled:
        alpha_new, weights = irm_update(masked, state.alpha, state.lam, state.beta)
    else:
        counts = np.asarray(sample_counts, dtype=np.float64)
        weights = counts / counts.sum()
        alpha_new = state.alpha

    out = np.zeros_like(grads[0].values)
    for w, g in zip(weights, masked):
        out += w * g

    drift = 0.0 if state.mask_prev is None else mask_drift(state.mask_prev, mask)
    result = AggregationResult(
        global_gradient=grads[0].with_values(out),
        mask=mask,
        weights=weights,
        drift=drift,
    )
    new_state = replace(state, alpha=alpha_new, mask_prev=mask, round=state.round + 1)
    return result, new_state


def apply_update(
    weights: ParameterVector, gradient: ParameterVector, learning_rate: float
) -> ParameterVector:
    """One server step: weights - learning_rate * gradient."""
    check_same_manifest(weights, gradient)
    return weights.with_values(weights.values - learning_rate * gradient.values)


def mask_drift(mask_prev: np.ndarray, mask_cur: np.ndarray) -> float:
    """1 - IOU of two binary masks, in [0, 1]."""
    mask_prev = np.asarray(mask_prev)
    mask_cur = np.asarray(mask_cur)
    if mask_prev.shape != mask_cur.shape:
        raise ValueError("masks have different lengths")
    a = mask_prev > 0
    b = mask_cur > 0
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    inter = np.logical_and(a, b).sum()
    return float(1.0 - inter / union)
