"""Two-layer GNN backbones with analytic gradients.

Backbones:
  * ``PMLP_GCN`` trains as a plain MLP (edges ignored) and switches to
    symmetric-normalized mean aggregation at inference time.
  * ``SAGE_MEAN`` concatenates each node's features with its neighbors' mean
    in both modes (full neighborhoods, no fan-out sampling).

Everything is float64 and deterministic; gradients are exact closed-form
backprop through the train-mode forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graphs import Graph
from .params import Manifest, ParameterVector, flatten, unflatten


class Backbone(str, Enum):
    PMLP_GCN = "pmlp_gcn"
    SAGE_MEAN = "sage_mean"


class ForwardMode(str, Enum):
    TRAIN = "train"
    INFER = "infer"


@dataclass(frozen=True)
class ModelConfig:
    backbone: Backbone
    feat_dim: int
    num_classes: int
    hidden_dim: int = 128
    num_layers: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        if self.num_layers != 2:
            raise ValueError("only 2-layer backbones are supported")
        if self.feat_dim < 1 or self.num_classes < 2:
            raise ValueError("need feat_dim >= 1 and num_classes >= 2")


def build_manifest(config: ModelConfig) -> Manifest:
    in_mult = 2 if config.backbone is Backbone.SAGE_MEAN else 1
    return (
        ("layer1.weight", (in_mult * config.feat_dim, config.hidden_dim)),
        ("layer1.bias", (config.hidden_dim,)),
        ("layer2.weight", (in_mult * config.hidden_dim, config.num_classes)),
        ("layer2.bias", (config.num_classes,)),
    )


def init_params(config: ModelConfig) -> ParameterVector:
    """Fan-in-scaled uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(config.seed)
    manifest = build_manifest(config)
    layers = {}
    for name, shape in manifest:
        if name.endswith("bias"):
            layers[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            layers[name] = rng.uniform(-bound, bound, size=shape)
    return flatten(layers, manifest)


def _check_inputs(params: ParameterVector, graph: Graph, config: ModelConfig) -> None:
    if params.manifest != build_manifest(config):
        raise ValueError("parameter vector does not match the model configuration")
    if graph.feat_dim != config.feat_dim:
        raise ValueError(
            f"graph has feat_dim {graph.feat_dim}, model expects {config.feat_dim}"
        )
    if graph.num_classes != config.num_classes:
        raise ValueError(
            f"graph has {graph.num_classes} classes, model expects {config.num_classes}"
        )


def forward(
    params: ParameterVector, graph: Graph, config: ModelConfig, mode: ForwardMode
) -> np.ndarray:
    """Logits for every node, shape [node_count, num_classes]."""
    _check_inputs(params, graph, config)
    w = unflatten(params)
    x = graph.features
    if config.backbone is Backbone.PMLP_GCN:
        if mode is ForwardMode.INFER:
            prop = graph.sym_norm_adjacency
            x = prop @ x
        h = np.maximum(x @ w["layer1.weight"] + w["layer1.bias"], 0.0)
        if mode is ForwardMode.INFER:
            h = prop @ h
        return h @ w["layer2.weight"] + w["layer2.bias"]

    q = graph.neighbor_mean
    m0 = np.concatenate([x, q @ x], axis=1)
    h = np.maximum(m0 @ w["layer1.weight"] + w["layer1.bias"], 0.0)
    m1 = np.concatenate([h, q @ h], axis=1)
    return m1 @ w["layer2.weight"] + w["layer2.bias"]


def _masked_indices(graph: Graph, split: str) -> np.ndarray:
    idx = np.flatnonzero(graph.mask_for(split))
    if idx.size == 0:
        raise ValueError(f"split {split!r} selects no nodes")
    return idx


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over the given rows plus the gradient w.r.t. those logits."""
    shift = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - shift)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = logits - shift - np.log(total)
    m = logits.shape[0]
    loss = -log_probs[np.arange(m), labels].mean()
    grad = exp / total
    grad[np.arange(m), labels] -= 1.0
    return float(loss), grad / m


def loss_and_grad(
    params: ParameterVector, graph: Graph, config: ModelConfig, split: str = "train"
) -> tuple[float, ParameterVector]:
    """Mean cross-entropy over the masked nodes and its exact gradient.

    Uses the train-mode forward pass (for PMLP that is the MLP path, which is
    what clients upload gradients of).
    """
    _check_inputs(params, graph, config)
    idx = _masked_indices(graph, split)
    w = unflatten(params)
    labels = graph.labels[idx]

    if config.backbone is Backbone.PMLP_GCN:
        x = graph.features[idx]
        z1 = x @ w["layer1.weight"] + w["layer1.bias"]
        h1 = np.maximum(z1, 0.0)
        logits = h1 @ w["layer2.weight"] + w["layer2.bias"]
        loss, d_logits = _cross_entropy(logits, labels)
        d_w2 = h1.T @ d_logits
        d_b2 = d_logits.sum(axis=0)
        d_z1 = (d_logits @ w["layer2.weight"].T) * (z1 > 0)
        grads = {
            "layer1.weight": x.T @ d_z1,
            "layer1.bias": d_z1.sum(axis=0),
            "layer2.weight": d_w2,
            "layer2.bias": d_b2,
        }
    else:
        q = graph.neighbor_mean
        x = graph.features
        m0 = np.concatenate([x, q @ x], axis=1)
        z1 = m0 @ w["layer1.weight"] + w["layer1.bias"]
        h1 = np.maximum(z1, 0.0)
        m1 = np.concatenate([h1, q @ h1], axis=1)
        logits = m1[idx] @ w["layer2.weight"] + w["layer2.bias"]
        loss, d_rows = _cross_entropy(logits, labels)
        d_m1 = np.zeros((graph.node_count, config.num_classes))
        d_m1[idx] = d_rows
        d_w2 = m1[idx].T @ d_rows
        d_b2 = d_rows.sum(axis=0)
        back = d_m1 @ w["layer2.weight"].T
        hidden = config.hidden_dim
        d_h1 = back[:, :hidden] + q.T @ back[:, hidden:]
        d_z1 = d_h1 * (z1 > 0)
        grads = {
            "layer1.weight": m0.T @ d_z1,
            "layer1.bias": d_z1.sum(axis=0),
            "layer2.weight": d_w2,
            "layer2.bias": d_b2,
        }
    return loss, flatten(grads, params.manifest)


def accuracy(
    params: ParameterVector, graph: Graph, config: ModelConfig, split: str = "test"
) -> float:
    """Fraction of masked nodes classified correctly by the infer-mode forward.

    Argmax ties resolve to the lowest class index.
    """
    idx = _masked_indices(graph, split)
    logits = forward(params, graph, config, ForwardMode.INFER)
    preds = np.argmax(logits[idx], axis=1)
    return float(np.mean(preds == graph.labels[idx]))


def evaluation_loss(
    params: ParameterVector, graph: Graph, config: ModelConfig, split: str = "val"
) -> float:
    """Mean cross-entropy of the infer-mode forward over a split."""
    idx = _masked_indices(graph, split)
    logits = forward(params, graph, config, ForwardMode.INFER)
    loss, _ = _cross_entropy(logits[idx], graph.labels[idx])
    return loss
