"""Request and response models for the experiment service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentSpec


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(StrictModel):
    config: ExperimentSpec
    out_dir: str
    baseline_summary: str | None = None


class SummaryRow(BaseModel):
    domain: str
    mean_pct: float
    std_pct: float
    delta_pct: float | None = None


class RunResponse(BaseModel):
    out_dir: str
    metrics_csv: str
    summary_csv: str
    manifest: str
    rounds: int
    summary: list[SummaryRow]


class SweepRequest(StrictModel):
    config: ExperimentSpec
    out_dir: str
    rho_values: list[float] = Field(default=[0.1, 0.3, 0.5, 0.7, 0.9], min_length=1)
    beta_values: list[float] = Field(default=[0.1, 0.3, 0.5, 0.7, 0.9], min_length=1)


class SweepCell(BaseModel):
    rho: float
    beta: float
    avg_pct: float | None
    status: str
    out_dir: str


class SweepResponse(BaseModel):
    sweep_csv: str
    cells: list[SweepCell]
    best: SweepCell | None


class PartitionRequest(StrictModel):
    nodes_path: str
    edges_path: str
    plan: str = Field(description="ratio spec such as 1:10:1:1:1:1x2")
    seed: int = 0
    out_dir: str


class PartitionResponse(BaseModel):
    manifest: str
    client_dirs: list[str]
    total_clients: int
