"""Sorting a list as labelling a fully connected graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import Graph, fully_connected

NODE_FEATURES = 1
EDGE_FEATURES = 0


@dataclass
class SortSample:
    """Node ``i`` carries value ``x_i``.  Labels: node is the smallest; edge
    ``i -> j`` when ``x_j`` immediately follows ``x_i`` in sorted order."""

    graph: Graph
    node_labels: np.ndarray
    edge_labels: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.graph.nodes[:, 0]

    def to_json(self) -> dict:
        from ..graph import graph_to_dict
        return {"input": graph_to_dict(self.graph),
                "target": {"nodes": self.node_labels.tolist(), "edges": self.edge_labels.tolist()}}

    @classmethod
    def from_json(cls, d: dict) -> "SortSample":
        from ..graph import graph_from_dict
        return cls(graph_from_dict(d["input"], NODE_FEATURES, EDGE_FEATURES),
                   np.array(d["target"]["nodes"], dtype=np.float64),
                   np.array(d["target"]["edges"], dtype=np.float64))


def sort_labels(values: np.ndarray, senders: np.ndarray, receivers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(values, kind="stable")
    nodes = np.zeros(len(values))
    nodes[order[0]] = 1.0
    successor = np.full(len(values), -1)
    successor[order[:-1]] = order[1:]
    edges = (successor[senders] == receivers).astype(np.float64)
    return nodes, edges


def make_sample(values) -> SortSample:
    values = np.asarray(values, dtype=np.float64)
    if len(np.unique(values)) != len(values):
        raise ValueError("sort values must be distinct")
    senders, receivers = fully_connected(len(values))
    g = Graph(np.zeros(0), values[:, None], np.zeros((len(senders), 0)), senders, receivers)
    nodes, edges = sort_labels(values, senders, receivers)
    return SortSample(g, nodes, edges)


def gen_sort(n: int, rng: np.random.Generator) -> SortSample:
    if n < 1:
        raise ValueError("need at least one element")
    while True:
        values = rng.uniform(size=n)
        if len(np.unique(values)) == n:
            return make_sample(values)
