"""CSV and manifest emission for experiment runs.

metrics.csv keeps full-precision values (shortest round-trip repr, so files
are byte-stable for a given config and seed); summary.csv renders
percentages to two decimals. Manifests pair every result file with the
exact config snapshot that produced it.
"""

from __future__ import annotations

import csv
import json
import subprocess
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .orchestrator import ExperimentSummary, RoundMetrics

AVG_LABEL = "AVG"


def fmt(value: float) -> str:
    """Shortest exact decimal representation of a float64."""
    return repr(float(value))


def pct(value: float) -> str:
    return f"{100.0 * value:.2f}"


class MetricsWriter:
    """Append-per-round metrics.csv writer; flushes so failures keep progress."""

    def __init__(self, path: Path, domain_ids: list[int]):
        self.path = Path(path)
        self.domain_ids = list(domain_ids)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(
            ["round"]
            + [f"acc_d{d}" for d in self.domain_ids]
            + ["val_loss", "train_loss", "drift", "grad_norm"]
        )
        self._fh.flush()

    def append(self, m: RoundMetrics) -> None:
        self._writer.writerow(
            [m.round]
            + [fmt(m.per_domain_test_accuracy[d]) for d in self.domain_ids]
            + [fmt(m.mean_val_loss), fmt(m.mean_train_loss), fmt(m.drift), fmt(m.global_grad_l2)]
        )
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_summary_csv(
    path: Path, summary: ExperimentSummary, baseline: dict[str, float] | None = None
) -> None:
    """Rows of per-domain mean/std percentages plus the AVG row.

    ``baseline`` maps row labels to mean percentages from another run's
    summary; matching rows get a delta column.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "mean_pct", "std_pct", "delta_pct"])
        for d in sorted(summary.per_domain):
            label = f"d{d}"
            stat = summary.per_domain[d]
            delta = _delta(baseline, label, stat.mean)
            writer.writerow([label, pct(stat.mean), pct(stat.std), delta])
        writer.writerow(
            [
                AVG_LABEL,
                pct(summary.avg_mean),
                pct(summary.avg_std),
                _delta(baseline, AVG_LABEL, summary.avg_mean),
            ]
        )


def _delta(baseline: dict[str, float] | None, label: str, mean: float) -> str:
    if baseline is None or label not in baseline:
        return ""
    return f"{100.0 * mean - baseline[label]:+.2f}"


def read_summary_csv(path: Path) -> dict[str, float]:
    """Label -> mean percentage, for baseline comparisons."""
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["domain"]] = float(row["mean_pct"])
    return out


def source_version() -> str:
    try:
        head = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).parent,
        )
        if head.returncode == 0:
            return f"{__version__}+g{head.stdout.strip()}"
    except OSError:
        pass
    return __version__


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(path: Path, payload: dict) -> None:
    payload = {"version": source_version(), **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: Path) -> dict | None:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
