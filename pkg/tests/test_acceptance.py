"""End-to-end acceptance suite.

Each test prints one [PASS]/[FAIL]/[INFO] line (written straight to the
terminal, bypassing capture) so the whole gate is readable from any pytest
invocation. The heavier comparative runs are shared via module fixtures;
every federated run executed here also feeds the weight-invariant check.
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fedia.aggregation import AggregationState, aggregate_fedia
from fedia.config import ExperimentSpec, build_experiment
from fedia.graphs import build_graph, split_nodes
from fedia.models import Backbone, ForwardMode, ModelConfig, forward, init_params, loss_and_grad
from fedia.orchestrator import run_experiment, summarize
from fedia.params import ParameterVector
from fedia.training import LocalOptConfig, local_train, pseudo_gradient


_TERMINAL = None


@pytest.fixture(scope="module", autouse=True)
def _capture_terminal(request):
    global _TERMINAL
    _TERMINAL = request.config.pluginmanager.get_plugin("terminalreporter")
    yield
    _TERMINAL = None


def _report(name: str, ok: bool, detail: str, informational: bool = False) -> None:
    tag = "INFO" if informational else ("PASS" if ok else "FAIL")
    line = f"[{tag}] {name}: {detail}"
    if _TERMINAL is not None:
        _TERMINAL.write_line("")
        _TERMINAL.write_line(line)
    else:
        sys.__stdout__.write(line + "\n")
        sys.__stdout__.flush()


# --------------------------- shared run machinery --------------------------- #

class InvariantRecorder:
    """Checks the per-round server invariants on every observed round."""

    def __init__(self):
        self.rounds = 0
        self.violations = []

    def observer_for(self, rho: float | None):
        def observe(trace):
            self.rounds += 1
            if abs(trace.weights.sum() - 1.0) > 1e-12:
                self.violations.append(f"round {trace.round}: weights sum {trace.weights.sum()}")
            if not np.all(trace.weights > 0):
                self.violations.append(f"round {trace.round}: non-positive weight")
            if not 0.0 <= trace.drift <= 1.0:
                self.violations.append(f"round {trace.round}: drift {trace.drift}")
            if trace.mask is not None:
                d = trace.mask.size
                expected = math.ceil(rho * d)
                if trace.mask.sum() != expected:
                    self.violations.append(
                        f"round {trace.round}: mask support {int(trace.mask.sum())} != {expected}"
                    )
                delta = trace.weights_after.values - trace.weights_before.values
                if not set(np.flatnonzero(delta)) <= set(np.flatnonzero(trace.mask)):
                    self.violations.append(f"round {trace.round}: update outside mask")

        return observe


RECORDER = InvariantRecorder()

TASK = {
    "data": {
        "kind": "synthetic",
        "num_domains": 2,
        "nodes_per_domain": 120,
        "feat_dim": 48,
        "num_classes": 2,
        "skew_strength": 6.0,
        "class_separation": 2.5,
        "clients_per_domain": [5, 1],
        "intra_edge_prob": 0.15,
        "inter_edge_prob": 0.02,
    },
    "model": {"hidden_dim": 16},
    "local_opt": {"learning_rate": 0.2},
    "rounds": 100,
    "summarize_last": 20,
}


def task_spec(seed, **overrides):
    payload = {**TASK, "seed": seed}
    payload.update(overrides)
    return ExperimentSpec.model_validate(payload)


def run_with_invariants(spec):
    config = build_experiment(spec)
    rho = config.rho if config.strategy.uses_mask else None
    metrics = run_experiment(config, observer=RECORDER.observer_for(rho))
    return metrics, summarize(metrics, spec.summarize_last)


@pytest.fixture(scope="module")
def directional_runs():
    """5 seeds x {FedAvg, FedIA rho=0.1, FedIA rho=1.0} on the skewed task."""
    runs = {}
    for name, overrides in {
        "fedavg": {},
        "fedia_sparse": {"strategy": "fedia", "rho": 0.1},
        "fedia_dense": {"strategy": "fedia", "rho": 1.0},
    }.items():
        runs[name] = [run_with_invariants(task_spec(seed, **overrides)) for seed in range(5)]
    return runs


# ------------------------------- criteria ---------------------------------- #

def independent_loss(params, graph, config):
    """Cross-entropy recomputed from forward() logits, independent of backprop."""
    logits = forward(params, graph, config, ForwardMode.TRAIN)
    idx = np.flatnonzero(graph.train_mask)
    z = logits[idx]
    shift = z.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(z - shift).sum(axis=1))
    return float(np.mean(lse - z[np.arange(idx.size), graph.labels[idx]]))


def test_gradient_correctness_finite_difference():
    start = time.time()
    rng = np.random.default_rng(2024)
    worst = 0.0
    eps = 1e-4
    for backbone in (Backbone.PMLP_GCN, Backbone.SAGE_MEAN):
        for trial in range(10):
            n = int(rng.integers(6, 12))
            feat, classes, hidden = 5, 3, 4
            g = build_graph(
                rng.standard_normal((n, feat)),
                rng.integers(0, classes, n),
                np.argwhere(np.triu(rng.random((n, n)) < 0.4, k=1)),
                classes,
                0,
            )
            g = split_nodes(g, seed=int(rng.integers(1 << 31)))
            cfg = ModelConfig(backbone, feat, classes, hidden_dim=hidden, seed=int(rng.integers(1 << 31)))
            params = init_params(cfg)
            _, grad = loss_and_grad(params, g, cfg, "train")
            fd = np.zeros(params.size)
            base = params.values
            for i in range(params.size):
                up = base.copy()
                up[i] += eps
                down = base.copy()
                down[i] -= eps
                fd[i] = (
                    independent_loss(params.with_values(up), g, cfg)
                    - independent_loss(params.with_values(down), g, cfg)
                ) / (2 * eps)
            err = np.max(np.abs(grad.values - fd)) / (1.0 + np.max(np.abs(fd)))
            worst = max(worst, err)
    elapsed = time.time() - start
    ok = worst < 1e-4 and elapsed < 30.0
    _report(
        "gradient-correctness",
        ok,
        f"20 instances, both backbones, max rel err {worst:.2e} in {elapsed:.1f}s",
    )
    assert worst < 1e-4
    assert elapsed < 30.0


def test_mask_matches_bruteforce_oracle():
    rng = np.random.default_rng(7)
    failures = 0
    for _ in range(1000):
        d = int(rng.integers(1, 13))
        # coarse integer grid forces plenty of ties
        importance = rng.integers(0, 5, size=d).astype(float)
        rho = float(rng.uniform(0.01, 1.0))
        from fedia.aggregation import top_ratio_mask

        mask = top_ratio_mask(importance, rho)
        k = math.ceil(rho * d)
        order = sorted(range(d), key=lambda i: (-importance[i], i))
        expected = np.zeros(d)
        expected[order[:k]] = 1.0
        if not np.array_equal(mask, expected):
            failures += 1
    _report("mask-oracle", failures == 0, f"1000 random vectors (d<=12, ties), {failures} mismatches")
    assert failures == 0


def algorithm_reference(grads, alpha, rho, lam):
    """Line-by-line transcription of one masked aggregation round."""
    d = grads[0].size
    importance = np.zeros(d)
    for g in grads:
        importance += np.abs(g)
    importance /= len(grads)
    k = math.ceil(rho * d)
    order = sorted(range(d), key=lambda i: (-importance[i], i))
    mask = np.zeros(d)
    for i in order[:k]:
        mask[i] = 1.0
    masked = [g * mask for g in grads]
    mean = np.zeros(d)
    for g in masked:
        mean += g
    mean /= len(masked)
    z = 0.0
    alpha_next = []
    for g, a in zip(masked, alpha):
        dist = np.sqrt(((g - mean) ** 2).sum())
        a_new = a * np.exp(-lam * dist)
        alpha_next.append(a_new)
        z += a_new
    out = np.zeros(d)
    for g, a_new in zip(masked, alpha_next):
        out += (a_new / z) * g
    return out, mask


def test_aggregation_matches_reference_transcription():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        grads = [ParameterVector(rng.standard_normal(50), (("w", (50,)),)) for _ in range(3)]
        alpha = rng.uniform(0.05, 1.0, size=3)
        alpha /= alpha.sum()
        rho = float(rng.uniform(0.05, 1.0))
        lam = float(rng.uniform(0.0, 2.0))
        state = AggregationState(alpha=alpha, rho=rho, lam=lam, beta=0.0)
        result, _ = aggregate_fedia(grads, [1, 1, 1], state)
        ref_g, ref_mask = algorithm_reference([g.values for g in grads], alpha, rho, lam)
        assert np.array_equal(result.mask, ref_mask)
        worst = max(worst, float(np.max(np.abs(result.global_gradient.values - ref_g))))
    ok = worst < 1e-12
    _report("aggregation-oracle", ok, f"100 random 3-client d=50 rounds, max |diff| {worst:.2e}")
    assert ok


def test_masked_aggregation_degenerates_to_fedavg():
    # equal client sizes so sample-count weights equal the uniform weights
    equal = {"clients_per_domain": [3, 3]}
    fedavg = run_with_invariants(
        task_spec(3, rounds=50, data={**TASK["data"], **equal})
    )[0]
    fedia = run_with_invariants(
        task_spec(
            3,
            rounds=50,
            data={**TASK["data"], **equal},
            strategy="fedia",
            rho=1.0,
            beta=0.0,
            **{"lambda": 0.0},
        )
    )[0]
    worst = 0.0
    for ma, mb in zip(fedavg, fedia):
        for d in ma.per_domain_test_accuracy:
            worst = max(worst, abs(ma.per_domain_test_accuracy[d] - mb.per_domain_test_accuracy[d]))
        worst = max(worst, abs(ma.mean_val_loss - mb.mean_val_loss))
        worst = max(worst, abs(ma.global_grad_l2 - mb.global_grad_l2))
        worst = max(worst, float(np.max(np.abs(ma.weights - mb.weights))))
        worst = max(worst, abs(ma.drift - mb.drift))
    ok = worst < 1e-9
    _report("degeneracy", ok, f"rho=1 lambda=0 beta=0 vs plain averaging, 50 rounds, max |diff| {worst:.2e}")
    assert ok


def test_pseudo_gradient_reconstruction_identity():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(10):
        n = int(rng.integers(8, 14))
        g = build_graph(
            rng.standard_normal((n, 5)),
            rng.integers(0, 3, n),
            np.argwhere(np.triu(rng.random((n, n)) < 0.3, k=1)),
            3,
            0,
        )
        g = split_nodes(g, seed=trial)
        cfg = ModelConfig(Backbone.PMLP_GCN, 5, 3, hidden_dim=4, seed=trial)
        w = init_params(cfg)
        opt = LocalOptConfig(
            learning_rate=0.05, momentum=0.0, weight_decay=0.0, local_iterations=1
        )
        update = local_train(w, g, cfg, opt)
        rebuilt = pseudo_gradient(w, update.final_weights, opt.learning_rate)
        worst = max(worst, float(np.max(np.abs(rebuilt.values - update.gradient.values))))
    ok = worst < 1e-12
    _report("pseudo-gradient", ok, f"single plain SGD step, 10 instances, max |diff| {worst:.2e}")
    assert ok


def test_directional_replication(directional_runs):
    fedavg = directional_runs["fedavg"]
    sparse = directional_runs["fedia_sparse"]

    def worst_domain(summary):
        return min(stat.mean for stat in summary.per_domain.values())

    gaps = [
        max(s.per_domain[d].mean for d in s.per_domain)
        - min(s.per_domain[d].mean for d in s.per_domain)
        for _, s in fedavg
    ]
    fedavg_worst = float(np.mean([worst_domain(s) for _, s in fedavg]))
    sparse_worst = float(np.mean([worst_domain(s) for _, s in sparse]))
    fedavg_std = float(np.mean([s.avg_std for _, s in fedavg]))
    sparse_std = float(np.mean([s.avg_std for _, s in sparse]))

    gap_ok = float(np.mean(gaps)) >= 0.10
    worst_ok = sparse_worst >= fedavg_worst
    std_ok = sparse_std <= fedavg_std
    _report(
        "directional-replication",
        gap_ok and worst_ok and std_ok,
        f"FedAvg domain gap {np.mean(gaps):.3f} (needs >=0.10); "
        f"worst-domain acc {sparse_worst:.3f} vs {fedavg_worst:.3f} (masked vs plain); "
        f"last-20 AVG std {sparse_std:.4f} vs {fedavg_std:.4f}",
    )
    assert gap_ok, "task is not skewed enough to separate domains by 10pp under plain averaging"
    assert worst_ok
    assert std_ok


def test_sparsity_sufficiency(directional_runs):
    sparse = float(np.mean([s.avg_mean for _, s in directional_runs["fedia_sparse"]]))
    dense = float(np.mean([s.avg_mean for _, s in directional_runs["fedia_dense"]]))
    ok = sparse >= dense - 0.03
    _report(
        "sparsity-sufficiency",
        ok,
        f"rho=0.1 final AVG {sparse:.3f} vs rho=1.0 {dense:.3f} (allowed shortfall 3pp)",
    )
    assert ok


def test_drift_report():
    spec = task_spec(0, strategy="fedia", rho=0.05)
    metrics, _ = run_with_invariants(spec)
    drifts = [m.drift for m in metrics if m.round > 10]
    max_drift = max(drifts)
    ok = 0.0 <= max_drift <= 1.0
    _report(
        "drift-report",
        ok,
        f"rho=0.05, 100 rounds: max drift after round 10 = {max_drift:.4f} "
        f"(reference empirical bound 0.05); informational only",
        informational=True,
    )
    assert ok  # the value is reported, not bounded


def test_weight_invariants_across_all_runs(directional_runs):
    del directional_runs  # ensure the shared runs executed first
    ok = not RECORDER.violations and RECORDER.rounds >= 1500
    _report(
        "weight-invariants",
        ok,
        f"{RECORDER.rounds} rounds checked, {len(RECORDER.violations)} violations",
    )
    assert RECORDER.rounds >= 1500
    assert not RECORDER.violations, RECORDER.violations[:5]


TWITCH_DIR = os.environ.get("FEDIA_TWITCH_DIR")


@pytest.mark.skipif(
    not TWITCH_DIR, reason="set FEDIA_TWITCH_DIR to per-domain CSV exports to run"
)
def test_twitch_setting1_baseline_accuracy():
    """Optional: plain averaging on real 6-domain exports, 12 clients, 200 rounds."""
    base = Path(TWITCH_DIR)
    domains = sorted(p for p in base.iterdir() if p.is_dir())
    assert len(domains) == 6, f"expected 6 domain directories under {base}"
    spec = ExperimentSpec.model_validate(
        {
            "data": {
                "kind": "csv",
                "domains": [
                    {"nodes": str(d / "nodes.csv"), "edges": str(d / "edges.csv")}
                    for d in domains
                ],
                "clients_per_domain": 2,
            },
            "model": {"hidden_dim": 128},
            "local_opt": {"learning_rate": 0.01},
            "strategy": "fedavg",
            "rounds": 200,
            "summarize_last": 20,
            "seed": 0,
        }
    )
    metrics = run_experiment(build_experiment(spec))
    summary = summarize(metrics, 20)
    avg_pct = 100.0 * summary.avg_mean
    ok = abs(avg_pct - 57.22) <= 3.0
    _report("twitch-setting1", ok, f"AVG {avg_pct:.2f}% vs reference 57.22% (tolerance 3pp)")
    assert ok
