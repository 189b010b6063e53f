"""Random graph builders shared by the test modules."""

import numpy as np

from graphnets.graph import Graph


def random_graph(rng, n_node=None, n_edge=None, dims=(3, 2, 4), max_nodes=12, max_edges=40,
                 n_types=1) -> Graph:
    d_e, d_v, d_u = dims
    n = int(rng.integers(1, max_nodes + 1)) if n_node is None else n_node
    m = int(rng.integers(0, max_edges + 1)) if n_edge is None else n_edge
    return Graph(
        rng.normal(size=d_u),
        rng.normal(size=(n, d_v)),
        rng.normal(size=(m, d_e)),
        rng.integers(0, n, size=m) if n else np.zeros(0, dtype=int),
        rng.integers(0, n, size=m) if n else np.zeros(0, dtype=int),
        rng.integers(0, n_types, size=m),
    )


def path_graph(n, node_dim=2, edge_dim=1, global_dim=0, rng=None) -> Graph:
    """Bidirectional path 0 - 1 - ... - (n-1)."""
    rng = rng or np.random.default_rng(0)
    s = np.concatenate([np.arange(n - 1), np.arange(1, n)])
    r = np.concatenate([np.arange(1, n), np.arange(n - 1)])
    return Graph(rng.normal(size=global_dim), rng.normal(size=(n, node_dim)),
                 rng.normal(size=(len(s), edge_dim)), s, r)


def random_perms(rng, g: Graph):
    return rng.permutation(g.n_node), rng.permutation(g.n_edge)
