"""Shortest-path labelling on random geometric graphs."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..graph import Graph

NODE_FEATURES = 2  # is_source, is_target
EDGE_FEATURES = 1  # length
DEFAULT_RADIUS = 0.6
MAX_ATTEMPTS = 1000


@dataclass
class ShortestPathSample:
    """Input graph plus 0/1 on-path labels.

    Undirected links are stored as two directed edges; both directions of
    an on-path link are labelled.
    """

    graph: Graph
    node_labels: np.ndarray
    edge_labels: np.ndarray
    source: int
    target: int
    path: list[int]

    def to_json(self) -> dict:
        from ..graph import graph_to_dict
        return {"input": graph_to_dict(self.graph),
                "target": {"nodes": self.node_labels.tolist(), "edges": self.edge_labels.tolist()},
                "source": self.source, "goal": self.target, "path": self.path}

    @classmethod
    def from_json(cls, d: dict) -> "ShortestPathSample":
        from ..graph import graph_from_dict
        return cls(graph_from_dict(d["input"], NODE_FEATURES, EDGE_FEATURES),
                   np.array(d["target"]["nodes"], dtype=np.float64),
                   np.array(d["target"]["edges"], dtype=np.float64), d["source"], d["goal"], list(d["path"]))


def dijkstra(n: int, senders, receivers, lengths, source: int) -> tuple[np.ndarray, list[list[int]]]:
    """Distances from ``source`` and, per node, every predecessor lying on some shortest path."""
    adj: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for s, r, w in zip(senders, receivers, lengths):
        adj[int(s)].append((int(r), float(w)))
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            if d + w < dist[v]:
                dist[v] = d + w
                heapq.heappush(heap, (dist[v], v))
    preds: list[list[int]] = [[] for _ in range(n)]
    for s, r, w in zip(senders, receivers, lengths):
        s, r = int(s), int(r)
        if np.isfinite(dist[s]) and _close(dist[s] + float(w), dist[r]) and s != r:
            preds[r].append(s)
    return dist, preds


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def shortest_path(n: int, senders, receivers, lengths, source: int, target: int) -> list[int]:
    """Node sequence from source to target; ties go to the lowest-index predecessor."""
    dist, preds = dijkstra(n, senders, receivers, lengths, source)
    if not np.isfinite(dist[target]):
        raise ValueError("target unreachable")
    path = [target]
    while path[-1] != source:
        path.append(min(preds[path[-1]]))
    return path[::-1]


def label_path(g: Graph, path: list[int]) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.zeros(g.n_node)
    nodes[path] = 1.0
    links = {frozenset(p) for p in zip(path[:-1], path[1:])}
    edges = np.array([1.0 if frozenset((int(s), int(r))) in links and s != r else 0.0
                      for s, r in zip(g.senders, g.receivers)])
    return nodes, edges


def _connected(n: int, senders, receivers) -> bool:
    seen = {0}
    stack = [0]
    adj: list[list[int]] = [[] for _ in range(n)]
    for s, r in zip(senders, receivers):
        adj[int(s)].append(int(r))
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


def geometric_graph(n_nodes: int, radius: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray,
                                                                                      np.ndarray, np.ndarray]:
    """Connected random geometric graph in the unit square; redraws disconnected samples."""
    for _ in range(MAX_ATTEMPTS):
        pos = rng.uniform(size=(n_nodes, 2))
        i, j = np.triu_indices(n_nodes, k=1)
        length = np.linalg.norm(pos[i] - pos[j], axis=1)
        keep = length <= radius
        i, j, length = i[keep], j[keep], length[keep]
        senders = np.concatenate([i, j])
        receivers = np.concatenate([j, i])
        lengths = np.concatenate([length, length])
        if _connected(n_nodes, senders, receivers):
            return pos, senders, receivers, lengths
    raise RuntimeError(f"no connected graph after {MAX_ATTEMPTS} draws; raise the radius")


def make_sample(n_nodes: int, senders, receivers, lengths, source: int, target: int) -> ShortestPathSample:
    feats = np.zeros((n_nodes, NODE_FEATURES))
    feats[source, 0] = 1.0
    feats[target, 1] = 1.0
    g = Graph(np.zeros(0), feats, np.asarray(lengths, dtype=np.float64).reshape(-1, 1), senders, receivers)
    path = shortest_path(n_nodes, senders, receivers, lengths, source, target)
    nodes, edges = label_path(g, path)
    return ShortestPathSample(g, nodes, edges, source, target, path)


def gen_shortest_path(n_nodes: int, rng: np.random.Generator, radius: float = DEFAULT_RADIUS) -> ShortestPathSample:
    if n_nodes < 2:
        raise ValueError("need at least 2 nodes")
    _, senders, receivers, lengths = geometric_graph(n_nodes, radius, rng)
    source, target = (int(x) for x in rng.choice(n_nodes, size=2, replace=False))
    return make_sample(n_nodes, senders, receivers, lengths, source, target)
