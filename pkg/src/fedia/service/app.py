"""HTTP surface over the experiment runner.

Runs execute synchronously in the request handler; at desk scale a run is
seconds to minutes, and the CLI's default transport drives the app
in-process anyway. Validation problems map to 400/422, runtime failures
(diverged training, I/O) to 500; partial metrics stay on disk either way.
"""

from __future__ import annotations

import csv
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..graphs import GraphFormatError, PartitionPlan
from ..runner import run_partition, run_single, run_sweep
from ..training import TrainingDiverged
from .schemas import (
    HealthResponse,
    PartitionRequest,
    PartitionResponse,
    RunRequest,
    RunResponse,
    SummaryRow,
    SweepCell,
    SweepRequest,
    SweepResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="fedia", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(GraphFormatError)
    async def _format_error(request: Request, exc: GraphFormatError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(TrainingDiverged)
    async def _diverged(request: Request, exc: TrainingDiverged) -> JSONResponse:
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/runs", response_model=RunResponse)
    def runs(request: RunRequest) -> RunResponse:
        baseline = Path(request.baseline_summary) if request.baseline_summary else None
        if baseline is not None and not baseline.is_file():
            raise ValueError(f"baseline summary not found: {baseline}")
        outcome = run_single(request.config, Path(request.out_dir), baseline)
        rows = _summary_rows(outcome.paths.summary)
        return RunResponse(
            out_dir=str(outcome.paths.out_dir),
            metrics_csv=str(outcome.paths.metrics),
            summary_csv=str(outcome.paths.summary),
            manifest=str(outcome.paths.manifest),
            rounds=outcome.rounds,
            summary=rows,
        )

    @app.post("/sweeps", response_model=SweepResponse)
    def sweeps(request: SweepRequest) -> SweepResponse:
        sweep_path, cells = run_sweep(
            request.config,
            Path(request.out_dir),
            tuple(request.rho_values),
            tuple(request.beta_values),
        )
        out_cells = [
            SweepCell(
                rho=c.rho,
                beta=c.beta,
                avg_pct=c.avg_pct,
                status=c.status,
                out_dir=str(c.out_dir),
            )
            for c in cells
        ]
        completed = [c for c in out_cells if c.avg_pct is not None]
        best = max(completed, key=lambda c: c.avg_pct) if completed else None
        return SweepResponse(sweep_csv=str(sweep_path), cells=out_cells, best=best)

    @app.post("/partitions", response_model=PartitionResponse)
    def partitions(request: PartitionRequest) -> PartitionResponse:
        for path in (request.nodes_path, request.edges_path):
            if not Path(path).is_file():
                raise ValueError(f"input file not found: {path}")
        plan = PartitionPlan.parse(request.plan, request.seed)
        outcome = run_partition(
            Path(request.nodes_path), Path(request.edges_path), plan, Path(request.out_dir)
        )
        return PartitionResponse(
            manifest=str(outcome.manifest),
            client_dirs=[str(d) for d in outcome.client_dirs],
            total_clients=len(outcome.client_dirs),
        )

    return app


def _summary_rows(summary_path: Path) -> list[SummaryRow]:
    rows = []
    with open(summary_path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                SummaryRow(
                    domain=row["domain"],
                    mean_pct=float(row["mean_pct"]),
                    std_pct=float(row["std_pct"]),
                    delta_pct=float(row["delta_pct"]) if row["delta_pct"] else None,
                )
            )
    return rows


app = create_app()
