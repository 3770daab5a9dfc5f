"""Experiment configuration schema and dataset assembly.

Configs are strict JSON documents (unknown keys rejected) validated by
pydantic; the same models serve as the service's request bodies. A single
master seed drives data generation, partitioning, and weight init through
an ordered stream of derived seeds, so a config snapshot fully determines
every artifact a run produces.
"""

from __future__ import annotations

import dataclasses
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .graphs import Graph, generate_synthetic_domains, load_domain, partition_domain
from .models import Backbone, ModelConfig
from .orchestrator import ClientData, ExperimentConfig, Strategy
from .training import LocalOptConfig


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SyntheticDataSpec(StrictModel):
    kind: Literal["synthetic"] = "synthetic"
    num_domains: int = Field(ge=1)
    nodes_per_domain: int = Field(ge=3)
    feat_dim: int = Field(ge=1)
    num_classes: int = Field(ge=2)
    skew_strength: float = Field(ge=0.0)
    class_separation: float = 3.0
    intra_edge_prob: float = 0.1
    inter_edge_prob: float = 0.02
    clients_per_domain: Union[int, list[int]] = 1


class CsvDomainSpec(StrictModel):
    nodes: str
    edges: str


class CsvDataSpec(StrictModel):
    kind: Literal["csv"] = "csv"
    domains: list[CsvDomainSpec] = Field(min_length=1)
    num_classes: int | None = None
    clients_per_domain: Union[int, list[int]] = 1


DataSpec = Annotated[Union[SyntheticDataSpec, CsvDataSpec], Field(discriminator="kind")]


class ModelSpec(StrictModel):
    backbone: Literal["pmlp_gcn", "sage_mean"] = "pmlp_gcn"
    hidden_dim: int = Field(default=128, ge=1)


class LocalOptSpec(StrictModel):
    learning_rate: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-5, ge=0)
    local_iterations: int = Field(default=5, ge=1)
    prox_mu: float = Field(default=0.0, ge=0)


class ExperimentSpec(StrictModel):
    """Everything needed to reproduce one experiment, round for round."""

    data: DataSpec
    model: ModelSpec = ModelSpec()
    local_opt: LocalOptSpec = LocalOptSpec()
    strategy: Literal["fedavg", "fedprox", "fedia", "fedia_p"] = "fedavg"
    fedia_base: Literal["fedavg", "fedprox"] = "fedavg"
    rounds: int = Field(default=200, ge=1)
    server_lr: float | None = Field(default=None, gt=0)
    rho: float = Field(default=0.1, gt=0, le=1)
    lam: float = Field(default=1.0, ge=0, alias="lambda")
    beta: float = Field(default=0.0, ge=0, lt=1)
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    summarize_last: int = Field(default=20, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentSpec":
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError("split_ratios must sum to 1")
        if self.rounds < self.summarize_last:
            raise ValueError("rounds must be >= summarize_last")
        needs_prox = self.strategy == "fedprox" or (
            self.strategy in ("fedia", "fedia_p") and self.fedia_base == "fedprox"
        )
        if needs_prox and self.local_opt.prox_mu <= 0:
            raise ValueError("proximal strategies require local_opt.prox_mu > 0")
        if not needs_prox and self.local_opt.prox_mu != 0:
            raise ValueError("local_opt.prox_mu must be 0 for non-proximal strategies")
        return self

    def snapshot(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _clients_per_domain(spec: Union[int, list[int]], num_domains: int) -> list[int]:
    if isinstance(spec, int):
        counts = [spec] * num_domains
    else:
        counts = list(spec)
        if len(counts) != num_domains:
            raise ValueError(
                f"clients_per_domain lists {len(counts)} entries for {num_domains} domains"
            )
    if any(c < 1 for c in counts):
        raise ValueError("every domain needs at least one client")
    return counts


def load_domain_graphs(data: DataSpec, seed: int) -> list[Graph]:
    """Materialize the per-domain graphs a config describes."""
    if isinstance(data, SyntheticDataSpec):
        return generate_synthetic_domains(
            num_domains=data.num_domains,
            nodes_per_domain=data.nodes_per_domain,
            feat_dim=data.feat_dim,
            num_classes=data.num_classes,
            skew_strength=data.skew_strength,
            seed=seed,
            class_separation=data.class_separation,
            intra_edge_prob=data.intra_edge_prob,
            inter_edge_prob=data.inter_edge_prob,
        )
    graphs = [load_domain(d.nodes, d.edges, data.num_classes) for d in data.domains]
    feat_dims = {g.feat_dim for g in graphs}
    if len(feat_dims) != 1:
        raise ValueError(f"domains disagree on feature dimension: {sorted(feat_dims)}")
    num_classes = max(g.num_classes for g in graphs)
    return [
        g if g.num_classes == num_classes else dataclasses.replace(g, num_classes=num_classes)
        for g in graphs
    ]


def build_experiment(spec: ExperimentSpec) -> ExperimentConfig:
    """Turn a validated config into runnable clients, model, and settings."""
    master = np.random.default_rng(spec.seed)
    data_seed = int(master.integers(2**63 - 1))
    model_seed = int(master.integers(2**63 - 1))

    domains = load_domain_graphs(spec.data, data_seed)
    counts = _clients_per_domain(spec.data.clients_per_domain, len(domains))

    clients: list[ClientData] = []
    for graph, k in zip(domains, counts):
        partition_seed = int(master.integers(2**63 - 1))
        for part in partition_domain(graph, k, partition_seed, spec.split_ratios):
            clients.append(ClientData(len(clients), graph.domain_id, part))

    model = ModelConfig(
        backbone=Backbone(spec.model.backbone),
        feat_dim=domains[0].feat_dim,
        num_classes=domains[0].num_classes,
        hidden_dim=spec.model.hidden_dim,
        seed=model_seed,
    )
    local_opt = LocalOptConfig(
        learning_rate=spec.local_opt.learning_rate,
        momentum=spec.local_opt.momentum,
        weight_decay=spec.local_opt.weight_decay,
        local_iterations=spec.local_opt.local_iterations,
        prox_mu=spec.local_opt.prox_mu,
    )
    return ExperimentConfig(
        clients=tuple(clients),
        model=model,
        local_opt=local_opt,
        strategy=Strategy(spec.strategy),
        fedia_base=Strategy(spec.fedia_base),
        rounds=spec.rounds,
        server_lr=spec.server_lr,
        rho=spec.rho,
        lam=spec.lam,
        beta=spec.beta,
        seed=spec.seed,
        summarize_last=spec.summarize_last,
    )
