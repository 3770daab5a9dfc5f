"""Graph containers, CSV ingestion, partitioning and synthetic generation.

A client's private graph is stored as a symmetric CSR adjacency plus dense
node features, integer labels, and boolean train/val/test masks. All
operations here are pure functions of their inputs and seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Malformed or inconsistent graph input (bad row, unknown node id, ...)."""


@dataclass(frozen=True)
class Graph:
    """One client's (or domain's) self-contained undirected graph.

    Adjacency is CSR with column indices strictly increasing per row and
    stored symmetrically. The three split masks are pairwise disjoint and
    cover every node. Instances are immutable; derived operators are cached.
    """

    node_count: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    domain_id: int

    def __post_init__(self) -> None:
        n = self.node_count
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        object.__setattr__(self, "features", _frozen(self.features, np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        for name in ("train_mask", "val_mask", "test_mask"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.bool_))

        if self.row_offsets.shape != (n + 1,) or self.row_offsets[0] != 0:
            raise GraphFormatError("row offsets must have length node_count+1 and start at 0")
        if np.any(np.diff(self.row_offsets) < 0):
            raise GraphFormatError("row offsets must be nondecreasing")
        if self.row_offsets[-1] != self.col_indices.size:
            raise GraphFormatError("row offsets do not match number of stored edges")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= n:
                raise GraphFormatError("column index out of range")
            diffs = np.diff(self.col_indices)
            row_break = np.zeros(diffs.size, dtype=bool)
            inner = self.row_offsets[1:-1]
            inner = inner[(inner > 0) & (inner < self.col_indices.size)]
            row_break[inner - 1] = True
            if np.any((diffs <= 0) & ~row_break):
                raise GraphFormatError("columns within a CSR row must be strictly increasing")
        if self.features.shape[0] != n or self.labels.shape != (n,):
            raise GraphFormatError("feature/label shapes do not match node count")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise GraphFormatError("label outside [0, num_classes)")
        masks = np.stack([self.train_mask, self.val_mask, self.test_mask])
        if masks.shape != (3, n) or np.any(masks.sum(axis=0) != 1):
            raise GraphFormatError("split masks must be disjoint and cover all nodes")
        adj = self.adjacency
        if (adj != adj.T).nnz != 0:
            raise GraphFormatError("adjacency is not symmetric")

    @property
    def feat_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def edge_count(self) -> int:
        """Stored directed entries (each undirected edge counts twice)."""
        return int(self.col_indices.size)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.col_indices.size, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.col_indices, self.row_offsets), shape=(self.node_count, self.node_count)
        )

    @cached_property
    def sym_norm_adjacency(self) -> sp.csr_matrix:
        """D^{-1/2} (A + I) D^{-1/2} with self-loops, the GCN propagation operator."""
        a_hat = (self.adjacency + sp.identity(self.node_count, format="csr")).tocsr()
        deg = np.asarray(a_hat.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        d = sp.diags(inv_sqrt)
        return (d @ a_hat @ d).tocsr()

    @cached_property
    def neighbor_mean(self) -> sp.csr_matrix:
        """Row-stochastic adjacency without self-loops; isolated nodes get zero rows."""
        deg = np.asarray(self.adjacency.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return (sp.diags(inv) @ self.adjacency).tocsr()

    def mask_for(self, split: str) -> np.ndarray:
        try:
            return {"train": self.train_mask, "val": self.val_mask, "test": self.test_mask}[split]
        except KeyError:
            raise ValueError(f"unknown split {split!r}") from None


def _frozen(arr: np.ndarray, dtype: type) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    if out is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


def symmetric_csr(node_count: int, edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build (row_offsets, col_indices) from an edge list.

    Edges are deduplicated and stored in both directions; self-loops are kept
    as a single diagonal entry.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= node_count:
            raise GraphFormatError("edge endpoint out of range")
        both = np.concatenate([edges, edges[:, ::-1]])
        both = np.unique(both, axis=0)  # sorts by (row, col) and dedups
        rows, cols = both[:, 0], both[:, 1]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    offsets = np.zeros(node_count + 1, dtype=np.int64)
    np.add.at(offsets, rows + 1, 1)
    return np.cumsum(offsets), cols


def _default_masks(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # All-train until split_nodes assigns real splits.
    return np.ones(n, dtype=bool), np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)


def build_graph(
    features: np.ndarray,
    labels: np.ndarray,
    edges: np.ndarray,
    num_classes: int,
    domain_id: int,
) -> Graph:
    """Assemble a Graph from raw arrays with default (all-train) masks."""
    n = int(features.shape[0])
    offsets, cols = symmetric_csr(n, edges)
    train, val, test = _default_masks(n)
    return Graph(
        node_count=n,
        row_offsets=offsets,
        col_indices=cols,
        features=features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=num_classes,
        domain_id=domain_id,
    )


# ----------------------------- CSV ingestion ----------------------------- #

def _parse_nodes_csv(nodes_path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (features, labels, domains) ordered by dense node id."""
    with open(nodes_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{nodes_path}: empty nodes file") from None
        d = len(header) - 3
        expected = ["id"] + [f"f{i}" for i in range(d)] + ["label", "domain"]
        if d < 1 or header != expected:
            raise GraphFormatError(
                f"{nodes_path}: header must be id,f0,...,f{{d-1}},label,domain"
            )
        ids, feats, labels, domains = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 3:
                raise GraphFormatError(f"{nodes_path}:{lineno}: expected {d + 3} fields")
            try:
                ids.append(int(row[0]))
                feats.append([float(v) for v in row[1 : d + 1]])
                labels.append(int(row[d + 1]))
                domains.append(int(row[d + 2]))
            except ValueError as exc:
                raise GraphFormatError(f"{nodes_path}:{lineno}: {exc}") from None
    n = len(ids)
    if n == 0:
        raise GraphFormatError(f"{nodes_path}: no node rows")
    order = np.argsort(ids, kind="stable")
    ids_arr = np.asarray(ids, dtype=np.int64)[order]
    if not np.array_equal(ids_arr, np.arange(n)):
        raise GraphFormatError(f"{nodes_path}: node ids must be dense 0..{n - 1}")
    features = np.asarray(feats, dtype=np.float64)[order]
    return features, np.asarray(labels, dtype=np.int64)[order], np.asarray(domains, dtype=np.int64)[order]


def _parse_edges_csv(edges_path: Path, node_count: int) -> np.ndarray:
    with open(edges_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{edges_path}: empty edges file") from None
        if header != ["src", "dst"]:
            raise GraphFormatError(f"{edges_path}: header must be src,dst")
        edges = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise GraphFormatError(f"{edges_path}:{lineno}: expected 2 fields")
            try:
                u, v = int(row[0]), int(row[1])
            except ValueError as exc:
                raise GraphFormatError(f"{edges_path}:{lineno}: {exc}") from None
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise GraphFormatError(f"{edges_path}:{lineno}: edge references unknown node id")
            edges.append((u, v))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def load_domain(nodes_path: str | Path, edges_path: str | Path, num_classes: int | None = None) -> Graph:
    """Load one domain's graph from node/edge CSV exports.

    The nodes file must carry a single domain tag. Duplicate edges collapse
    to one undirected edge; self-loops are preserved.
    """
    features, labels, domains = _parse_nodes_csv(Path(nodes_path))
    unique_domains = np.unique(domains)
    if unique_domains.size != 1:
        raise GraphFormatError(
            f"{nodes_path}: expected a single domain tag, found {unique_domains.tolist()}"
        )
    edges = _parse_edges_csv(Path(edges_path), features.shape[0])
    classes = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    return build_graph(features, labels, edges, classes, int(unique_domains[0]))


def load_dataset(nodes_path: str | Path, edges_path: str | Path, num_classes: int | None = None) -> dict[int, Graph]:
    """Load a possibly multi-domain export as one Graph per domain tag.

    Nodes are grouped by the domain column; edges crossing domains are
    dropped (each domain is a self-contained graph).
    """
    features, labels, domains = _parse_nodes_csv(Path(nodes_path))
    edges = _parse_edges_csv(Path(edges_path), features.shape[0])
    classes = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    out: dict[int, Graph] = {}
    for dom in np.unique(domains):
        node_ids = np.flatnonzero(domains == dom)
        local = -np.ones(features.shape[0], dtype=np.int64)
        local[node_ids] = np.arange(node_ids.size)
        if edges.size:
            keep = (local[edges[:, 0]] >= 0) & (local[edges[:, 1]] >= 0)
            sub_edges = np.stack([local[edges[keep, 0]], local[edges[keep, 1]]], axis=1)
        else:
            sub_edges = edges
        out[int(dom)] = build_graph(
            features[node_ids], labels[node_ids], sub_edges, classes, int(dom)
        )
    return out


def save_domain(graph: Graph, nodes_path: str | Path, edges_path: str | Path) -> None:
    """Write a graph back to the node/edge CSV format (undirected edges once)."""
    d = graph.feat_dim
    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"f{i}" for i in range(d)] + ["label", "domain"])
        for i in range(graph.node_count):
            writer.writerow(
                [i]
                + [repr(float(v)) for v in graph.features[i]]
                + [int(graph.labels[i]), graph.domain_id]
            )
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for u in range(graph.node_count):
            row = graph.col_indices[graph.row_offsets[u] : graph.row_offsets[u + 1]]
            for v in row:
                if v >= u:
                    writer.writerow([u, int(v)])


# ------------------------- splits and partitioning ------------------------ #

def split_nodes(
    graph: Graph, ratios: tuple[float, float, float] = (0.6, 0.2, 0.2), seed: int = 0
) -> Graph:
    """Assign train/val/test masks by a seeded shuffle.

    Split sizes are floor(ratio * n) with all remainder nodes going to train,
    so the result is deterministic given the seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = graph.node_count
    if n < 3:
        raise ValueError("graph has fewer than 3 nodes; cannot populate all splits")
    n_val = int(ratios[1] * n)
    n_test = int(ratios[2] * n)
    n_train = n - n_val - n_test
    perm = np.random.default_rng(seed).permutation(n)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return Graph(
        node_count=n,
        row_offsets=graph.row_offsets,
        col_indices=graph.col_indices,
        features=graph.features,
        labels=graph.labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=graph.num_classes,
        domain_id=graph.domain_id,
    )


def induced_subgraph(graph: Graph, node_ids: np.ndarray) -> Graph:
    """Subgraph on ``node_ids`` keeping only edges with both endpoints inside.

    Node ids are re-indexed to 0..len(node_ids)-1 in the given order; masks
    are carried over from the parent graph.
    """
    node_ids = np.asarray(node_ids, dtype=np.int64)
    sub = graph.adjacency[node_ids, :][:, node_ids].tocsr()
    sub.sort_indices()
    return Graph(
        node_count=int(node_ids.size),
        row_offsets=sub.indptr.astype(np.int64),
        col_indices=sub.indices.astype(np.int64),
        features=graph.features[node_ids],
        labels=graph.labels[node_ids],
        train_mask=graph.train_mask[node_ids],
        val_mask=graph.val_mask[node_ids],
        test_mask=graph.test_mask[node_ids],
        num_classes=graph.num_classes,
        domain_id=graph.domain_id,
    )


def partition_domain(
    graph: Graph,
    k: int,
    seed: int,
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> list[Graph]:
    """Randomly partition nodes into k near-equal induced subgraphs.

    Cross-client edges are dropped. Each client graph gets fresh split masks
    from :func:`split_nodes` with a seed derived from ``seed``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > graph.node_count:
        raise ValueError(f"cannot partition {graph.node_count} nodes into {k} clients")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(graph.node_count)
    groups = np.array_split(perm, k)
    split_seeds = rng.integers(0, 2**63 - 1, size=k)
    clients = []
    for group, split_seed in zip(groups, split_seeds):
        sub = induced_subgraph(graph, np.sort(group))
        clients.append(split_nodes(sub, split_ratios, int(split_seed)))
    return clients


@dataclass(frozen=True)
class PartitionPlan:
    """How to spread domains over clients, e.g. ratios 1:10:1:1:1:1 x 2."""

    domain_ratios: tuple[int, ...]
    clients_per_unit: int
    seed: int

    def __post_init__(self) -> None:
        if not self.domain_ratios or any(r < 1 for r in self.domain_ratios):
            raise ValueError("domain ratios must be positive integers")
        if self.clients_per_unit < 1:
            raise ValueError("clients_per_unit must be >= 1")

    @property
    def total_clients(self) -> int:
        return sum(r * self.clients_per_unit for r in self.domain_ratios)

    def clients_for_domain(self, index: int) -> int:
        return self.domain_ratios[index] * self.clients_per_unit

    @classmethod
    def parse(cls, text: str, seed: int) -> "PartitionPlan":
        """Parse compact plan strings like ``1:10:1:1:1:1x2``."""
        try:
            ratios_part, _, per_unit = text.partition("x")
            ratios = tuple(int(r) for r in ratios_part.split(":"))
            clients_per_unit = int(per_unit) if per_unit else 1
        except ValueError:
            raise ValueError(f"cannot parse partition plan {text!r}") from None
        return cls(ratios, clients_per_unit, seed)


# --------------------------- synthetic domains ---------------------------- #

def generate_synthetic_domains(
    num_domains: int,
    nodes_per_domain: int,
    feat_dim: int,
    num_classes: int,
    skew_strength: float,
    seed: int,
    class_separation: float = 3.0,
    intra_edge_prob: float = 0.1,
    inter_edge_prob: float = 0.02,
) -> list[Graph]:
    """Sample one stochastic-block-model graph per domain.

    Blocks follow the class labels (intra-block edges denser than inter).
    Features are class mean + a domain-specific offset of norm
    ``skew_strength`` + unit Gaussian noise; label marginals are uniform in
    every domain, so domains differ only in P(A, X).
    """
    if min(num_domains, nodes_per_domain, feat_dim, num_classes) < 1:
        raise ValueError("all counts must be >= 1")
    if skew_strength < 0:
        raise ValueError("skew_strength must be >= 0")
    if not intra_edge_prob > inter_edge_prob:
        raise ValueError("intra-block edge probability must exceed inter-block")
    rng = np.random.default_rng(seed)

    class_means = rng.standard_normal((num_classes, feat_dim))
    class_means *= class_separation / np.linalg.norm(class_means, axis=1, keepdims=True)

    graphs = []
    for dom in range(num_domains):
        direction = rng.standard_normal(feat_dim)
        offset = direction * (skew_strength / np.linalg.norm(direction))
        labels = rng.integers(0, num_classes, size=nodes_per_domain)
        noise = rng.standard_normal((nodes_per_domain, feat_dim))
        features = class_means[labels] + offset + noise

        same = labels[:, None] == labels[None, :]
        prob = np.where(same, intra_edge_prob, inter_edge_prob)
        draw = rng.random((nodes_per_domain, nodes_per_domain))
        upper = np.triu(draw < prob, k=1)
        edges = np.argwhere(upper)
        graphs.append(build_graph(features, labels, edges, num_classes, dom))
    return graphs
