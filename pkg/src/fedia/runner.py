"""Filesystem-level operations behind the service endpoints.

Each operation owns an output directory: runs emit metrics.csv,
summary.csv, and manifest.json; sweeps emit one run directory per grid
cell plus sweep.csv; partitioning emits per-client CSV pairs. Completed
cells are detected through their manifests, making sweeps resumable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentSpec, build_experiment
from .graphs import PartitionPlan, load_dataset, partition_domain, save_domain
from .orchestrator import ExperimentSummary, run_experiment, summarize
from .results import (
    AVG_LABEL,
    MetricsWriter,
    read_manifest,
    read_summary_csv,
    utc_now,
    write_manifest,
    write_summary_csv,
)

DEFAULT_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"
SWEEP_FILE = "sweep.csv"


@dataclass(frozen=True)
class RunPaths:
    out_dir: Path

    @property
    def metrics(self) -> Path:
        return self.out_dir / METRICS_FILE

    @property
    def summary(self) -> Path:
        return self.out_dir / SUMMARY_FILE

    @property
    def manifest(self) -> Path:
        return self.out_dir / MANIFEST_FILE


@dataclass(frozen=True)
class RunOutcome:
    paths: RunPaths
    summary: ExperimentSummary
    rounds: int


def run_single(
    spec: ExperimentSpec, out_dir: Path, baseline_summary: Path | None = None
) -> RunOutcome:
    """Execute one experiment and write its three artifacts.

    On a mid-run numerical failure the rounds completed so far stay flushed
    in metrics.csv and the manifest records the failure before the exception
    propagates.
    """
    paths = RunPaths(Path(out_dir))
    paths.out_dir.mkdir(parents=True, exist_ok=True)
    baseline = read_summary_csv(baseline_summary) if baseline_summary else None
    started = utc_now()
    config = build_experiment(spec)
    writer = MetricsWriter(paths.metrics, list(config.domain_ids))
    try:
        metrics = run_experiment(config, on_round=writer.append)
    except Exception as exc:
        writer.close()
        write_manifest(
            paths.manifest,
            {
                "status": "failed",
                "error": str(exc),
                "config": spec.snapshot(),
                "seed": spec.seed,
                "started": started,
                "finished": utc_now(),
                "outputs": {"metrics": str(paths.metrics)},
            },
        )
        raise
    writer.close()
    summary = summarize(metrics, spec.summarize_last)
    write_summary_csv(paths.summary, summary, baseline)
    write_manifest(
        paths.manifest,
        {
            "status": "completed",
            "config": spec.snapshot(),
            "seed": spec.seed,
            "started": started,
            "finished": utc_now(),
            "outputs": {
                "metrics": str(paths.metrics),
                "summary": str(paths.summary),
            },
        },
    )
    return RunOutcome(paths=paths, summary=summary, rounds=len(metrics))


@dataclass(frozen=True)
class SweepCellResult:
    rho: float
    beta: float
    avg_pct: float | None
    status: str
    out_dir: Path


def _cell_dir(out_dir: Path, rho: float, beta: float) -> Path:
    return out_dir / f"rho{rho:g}_beta{beta:g}"


def run_sweep(
    spec: ExperimentSpec,
    out_dir: Path,
    rho_values: tuple[float, ...] = DEFAULT_GRID,
    beta_values: tuple[float, ...] = DEFAULT_GRID,
) -> tuple[Path, list[SweepCellResult]]:
    """Run the rho x beta grid, skipping cells whose manifest says completed.

    Failed cells are recorded in sweep.csv and do not stop the sweep.
    """
    if spec.strategy not in ("fedia", "fedia_p"):
        raise ValueError("sweeps over rho/beta require strategy fedia or fedia_p")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells: list[SweepCellResult] = []
    for rho in rho_values:
        for beta in beta_values:
            cell_dir = _cell_dir(out_dir, rho, beta)
            cell_paths = RunPaths(cell_dir)
            manifest = read_manifest(cell_paths.manifest)
            if manifest is not None and manifest.get("status") == "completed":
                avg = read_summary_csv(cell_paths.summary).get(AVG_LABEL)
                cells.append(SweepCellResult(rho, beta, avg, "completed", cell_dir))
                continue
            cell_spec = spec.model_copy(update={"rho": rho, "beta": beta})
            try:
                outcome = run_single(cell_spec, cell_dir)
            except Exception:
                cells.append(SweepCellResult(rho, beta, None, "failed", cell_dir))
                continue
            cells.append(
                SweepCellResult(
                    rho, beta, 100.0 * outcome.summary.avg_mean, "completed", cell_dir
                )
            )
    sweep_path = out_dir / SWEEP_FILE
    with open(sweep_path, "w", newline="") as fh:
        fh.write("rho,beta,avg_pct,status\n")
        for cell in cells:
            avg = "" if cell.avg_pct is None else f"{cell.avg_pct:.2f}"
            fh.write(f"{cell.rho:g},{cell.beta:g},{avg},{cell.status}\n")
    return sweep_path, cells


@dataclass(frozen=True)
class PartitionOutcome:
    manifest: Path
    client_dirs: list[Path]


def run_partition(
    nodes_path: Path, edges_path: Path, plan: PartitionPlan, out_dir: Path
) -> PartitionOutcome:
    """Split a (possibly multi-domain) export into per-client CSV pairs.

    Domains are matched to plan ratios in sorted domain-id order; each
    domain is cut into ratio * clients_per_unit induced subgraphs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    domains = load_dataset(nodes_path, edges_path)
    domain_ids = sorted(domains)
    if len(domain_ids) != len(plan.domain_ratios):
        raise ValueError(
            f"plan lists {len(plan.domain_ratios)} ratios but data has {len(domain_ids)} domains"
        )
    master = np.random.default_rng(plan.seed)
    client_dirs: list[Path] = []
    records = []
    client_index = 0
    for pos, domain_id in enumerate(domain_ids):
        k = plan.clients_for_domain(pos)
        seed = int(master.integers(2**63 - 1))
        for part in partition_domain(domains[domain_id], k, seed):
            client_dir = out_dir / f"client_{client_index:03d}"
            client_dir.mkdir(exist_ok=True)
            save_domain(part, client_dir / "nodes.csv", client_dir / "edges.csv")
            records.append(
                {
                    "client": client_index,
                    "domain": domain_id,
                    "dir": client_dir.name,
                    "nodes": part.node_count,
                    "edges": part.edge_count // 2,
                }
            )
            client_dirs.append(client_dir)
            client_index += 1
    manifest_path = out_dir / MANIFEST_FILE
    write_manifest(
        manifest_path,
        {
            "status": "completed",
            "plan": {
                "domain_ratios": list(plan.domain_ratios),
                "clients_per_unit": plan.clients_per_unit,
            },
            "seed": plan.seed,
            "inputs": {"nodes": str(nodes_path), "edges": str(edges_path)},
            "clients": records,
            "finished": utc_now(),
        },
    )
    return PartitionOutcome(manifest=manifest_path, client_dirs=client_dirs)
