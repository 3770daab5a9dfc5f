import numpy as np
import pytest

from fedia.graphs import build_graph, split_nodes
from fedia.models import Backbone, ModelConfig


def make_graph(n=10, feat_dim=4, num_classes=3, edge_prob=0.4, seed=0, domain_id=0):
    """Random small graph with proper splits, for unit tests."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, feat_dim))
    labels = rng.integers(0, num_classes, size=n)
    draw = rng.random((n, n))
    edges = np.argwhere(np.triu(draw < edge_prob, k=1))
    g = build_graph(features, labels, edges, num_classes, domain_id)
    return split_nodes(g, seed=seed + 1)


@pytest.fixture
def small_graph():
    return make_graph()


@pytest.fixture(params=[Backbone.PMLP_GCN, Backbone.SAGE_MEAN], ids=["pmlp", "sage"])
def model_config(request, small_graph):
    return ModelConfig(
        backbone=request.param,
        feat_dim=small_graph.feat_dim,
        num_classes=small_graph.num_classes,
        hidden_dim=6,
        seed=5,
    )
