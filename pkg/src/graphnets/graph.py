"""Graph data model: a directed, attributed multigraph with a global attribute.

A :class:`Graph` stores node attributes as an ``(N_v, d_v)`` array, edge
attributes as an ``(N_e, d_e)`` array plus sender/receiver/type index
arrays, and the global attribute as a ``(d_u,)`` vector.  Any of the
attribute dims may be zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Base class for graph construction and manipulation errors."""


class InvalidPermutationError(GraphError):
    pass


class IncompatibleSchemaError(GraphError):
    pass


class IncompatibleStructureError(GraphError):
    pass


class InconsistentBatchError(GraphError):
    pass


class GraphParseError(GraphError):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


def _as_matrix(rows: Any, width: int | None = None) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0 if width is None else width)
    return arr


def _as_index(values: Any) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    return arr.reshape(-1)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable graph value ``(u, V, E)``.

    ``edge_types`` defaults to all zeros so untyped and typed graphs share
    one representation.
    """

    globals: np.ndarray
    nodes: np.ndarray
    edges: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    edge_types: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        u = np.asarray(self.globals, dtype=np.float64).reshape(-1)
        nodes = _as_matrix(self.nodes)
        edges = _as_matrix(self.edges)
        senders = _as_index(self.senders)
        receivers = _as_index(self.receivers)
        if self.edge_types is None:
            types = np.zeros(len(senders), dtype=np.int64)
        else:
            types = _as_index(self.edge_types)
        for name, value in (("globals", u), ("nodes", nodes), ("edges", edges),
                            ("senders", senders), ("receivers", receivers),
                            ("edge_types", types)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def from_lists(cls, u: Sequence[float], nodes: Sequence[Sequence[float]],
                   edges: Sequence[tuple], node_dim: int | None = None,
                   edge_dim: int | None = None) -> "Graph":
        """Build a graph from plain lists.

        ``edges`` holds ``(attr, sender, receiver)`` or
        ``(attr, sender, receiver, type)`` tuples.
        """
        if node_dim is None:
            node_dim = len(nodes[0]) if nodes else 0
        if edge_dim is None:
            edge_dim = len(edges[0][0]) if edges else 0
        node_arr = np.array(nodes, dtype=np.float64).reshape(len(nodes), node_dim)
        attrs = np.array([e[0] for e in edges], dtype=np.float64).reshape(len(edges), edge_dim)
        return cls(
            globals=np.array(u, dtype=np.float64),
            nodes=node_arr,
            edges=attrs,
            senders=[e[1] for e in edges],
            receivers=[e[2] for e in edges],
            edge_types=[e[3] if len(e) > 3 else 0 for e in edges],
        )

    @property
    def n_node(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_edge(self) -> int:
        return len(self.senders)

    @property
    def node_dim(self) -> int:
        return self.nodes.shape[1] if self.nodes.ndim == 2 else -1

    @property
    def edge_dim(self) -> int:
        return self.edges.shape[1] if self.edges.ndim == 2 else -1

    @property
    def global_dim(self) -> int:
        return self.globals.shape[0]

    def replace(self, **changes) -> "Graph":
        fields = dict(globals=self.globals, nodes=self.nodes, edges=self.edges,
                      senders=self.senders, receivers=self.receivers,
                      edge_types=self.edge_types)
        fields.update(changes)
        return Graph(**fields)

    def same_structure(self, other: "Graph") -> bool:
        return (self.n_node == other.n_node
                and np.array_equal(self.senders, other.senders)
                and np.array_equal(self.receivers, other.receivers))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.nodes.shape == other.nodes.shape
                and self.edges.shape == other.edges.shape
                and self.globals.shape == other.globals.shape
                and np.array_equal(self.globals, other.globals)
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.senders, other.senders)
                and np.array_equal(self.receivers, other.receivers)
                and np.array_equal(self.edge_types, other.edge_types))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (f"Graph(n_node={self.n_node}, n_edge={self.n_edge}, "
                f"dims=(u={self.global_dim}, v={self.node_dim}, e={self.edge_dim}))")


def empty_graph(node_dim: int = 0, edge_dim: int = 0, global_dim: int = 0) -> Graph:
    return Graph(np.zeros(global_dim), np.zeros((0, node_dim)), np.zeros((0, edge_dim)), [], [])


def validate(g: Graph | Mapping[str, Any]) -> list[str]:
    """Return the list of invariant violations; an empty list means valid.

    Accepts a :class:`Graph` or its JSON-style mapping form, which is the
    only way to express ragged (mismatched-dim) attribute lists.
    """
    if isinstance(g, Mapping):
        return _validate_mapping(g)
    problems: list[str] = []
    if g.nodes.ndim != 2:
        problems.append("node dim mismatch")
    if g.edges.ndim != 2:
        problems.append("edge dim mismatch")
    n_v = g.nodes.shape[0] if g.nodes.ndim >= 1 else 0
    n_e = len(g.senders)
    if len(g.receivers) != n_e or len(g.edge_types) != n_e or (g.edges.ndim == 2 and g.edges.shape[0] != n_e):
        problems.append("edge arrays have inconsistent lengths")
        n_e = min(n_e, len(g.receivers))
    if not np.all(np.isfinite(g.globals)):
        problems.append("global attribute not finite")
    for i in np.flatnonzero(~np.all(np.isfinite(g.nodes.reshape(n_v, -1)), axis=1)) if n_v else []:
        problems.append(f"node {i} attribute not finite")
    for k in range(n_e):
        problems.extend(_edge_problems(k, int(g.senders[k]), int(g.receivers[k]), n_v))
        if g.edges.ndim == 2 and k < g.edges.shape[0] and not np.all(np.isfinite(g.edges[k])):
            problems.append(f"edge {k} attribute not finite")
        if k < len(g.edge_types) and g.edge_types[k] < 0:
            problems.append(f"edge {k} type negative")
    return problems


def _edge_problems(k: int, sender: int, receiver: int, n_v: int) -> list[str]:
    out = []
    if not 0 <= receiver < n_v:
        out.append(f"edge {k} receiver out of range")
    if not 0 <= sender < n_v:
        out.append(f"edge {k} sender out of range")
    return out


def _finite_list(values: Any) -> bool:
    return isinstance(values, list) and all(
        isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in values)


def _validate_mapping(m: Mapping[str, Any]) -> list[str]:
    problems: list[str] = []
    u = m.get("u", [])
    nodes = m.get("nodes", [])
    edges = m.get("edges", [])
    if not _finite_list(u):
        problems.append("global attribute not finite")
    node_dims = set()
    for i, v in enumerate(nodes):
        if not _finite_list(v):
            problems.append(f"node {i} attribute not finite")
        else:
            node_dims.add(len(v))
    if len(node_dims) > 1:
        problems.append("node dim mismatch")
    edge_dims = set()
    for k, e in enumerate(edges):
        attr = e.get("attr", [])
        if not _finite_list(attr):
            problems.append(f"edge {k} attribute not finite")
        else:
            edge_dims.add(len(attr))
        problems.extend(_edge_problems(k, e.get("sender", -1), e.get("receiver", -1), len(nodes)))
        if e.get("type", 0) < 0:
            problems.append(f"edge {k} type negative")
    if len(edge_dims) > 1:
        problems.append("edge dim mismatch")
    return problems


def _check_perm(perm: Sequence[int], n: int, what: str) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64).reshape(-1)
    if len(p) != n or not np.array_equal(np.sort(p), np.arange(n)):
        raise InvalidPermutationError(f"{what} permutation is not a bijection of size {n}")
    return p


def permute(g: Graph, node_perm: Sequence[int], edge_perm: Sequence[int]) -> Graph:
    """Relabel nodes and reorder edges.

    ``node_perm[i]`` is the new index of old node ``i``; likewise for
    ``edge_perm``.  Sender/receiver indices are remapped accordingly.
    """
    p = _check_perm(node_perm, g.n_node, "node")
    q = _check_perm(edge_perm, g.n_edge, "edge")
    nodes = np.empty_like(g.nodes)
    nodes[p] = g.nodes
    edges = np.empty_like(g.edges)
    edges[q] = g.edges
    senders = np.empty_like(g.senders)
    senders[q] = p[g.senders]
    receivers = np.empty_like(g.receivers)
    receivers[q] = p[g.receivers]
    types = np.empty_like(g.edge_types)
    types[q] = g.edge_types
    return Graph(g.globals, nodes, edges, senders, receivers, types)


def inverse_permutation(perm: Sequence[int]) -> np.ndarray:
    p = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


@dataclass(frozen=True, eq=False)
class BatchedGraph:
    """Disjoint union of member graphs.

    ``merged.globals`` is unused (zero-length); per-member globals live in
    ``globals``.
    """

    merged: Graph
    node_offsets: np.ndarray
    edge_offsets: np.ndarray
    globals: tuple[np.ndarray, ...]

    @property
    def n_graphs(self) -> int:
        return len(self.globals)

    @property
    def n_node(self) -> np.ndarray:
        return np.diff(np.append(self.node_offsets, self.merged.n_node))

    @property
    def n_edge(self) -> np.ndarray:
        return np.diff(np.append(self.edge_offsets, self.merged.n_edge))


def batch(gs: Sequence[Graph]) -> BatchedGraph:
    if not gs:
        raise IncompatibleSchemaError("cannot batch an empty list of graphs")
    schema = (gs[0].node_dim, gs[0].edge_dim, gs[0].global_dim)
    for i, g in enumerate(gs):
        if (g.node_dim, g.edge_dim, g.global_dim) != schema:
            raise IncompatibleSchemaError(
                f"graph {i} has dims {(g.node_dim, g.edge_dim, g.global_dim)}, expected {schema}")
    n_node = np.array([g.n_node for g in gs], dtype=np.int64)
    n_edge = np.array([g.n_edge for g in gs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(n_node)[:-1]]).astype(np.int64)
    edge_offsets = np.concatenate([[0], np.cumsum(n_edge)[:-1]]).astype(np.int64)
    shift = np.repeat(node_offsets, n_edge)
    merged = Graph(
        globals=np.zeros(0),
        nodes=np.concatenate([g.nodes for g in gs]).reshape(int(n_node.sum()), schema[0]),
        edges=np.concatenate([g.edges for g in gs]).reshape(int(n_edge.sum()), schema[1]),
        senders=np.concatenate([g.senders for g in gs]) + shift,
        receivers=np.concatenate([g.receivers for g in gs]) + shift,
        edge_types=np.concatenate([g.edge_types for g in gs]),
    )
    return BatchedGraph(merged, node_offsets, edge_offsets, tuple(g.globals for g in gs))


def unbatch(bg: BatchedGraph) -> list[Graph]:
    m = bg.merged
    no = np.asarray(bg.node_offsets)
    eo = np.asarray(bg.edge_offsets)
    b = len(bg.globals)
    if len(no) != b or len(eo) != b:
        raise InconsistentBatchError("offset arrays do not match the number of member globals")
    n_bounds = np.append(no, m.n_node)
    e_bounds = np.append(eo, m.n_edge)
    if b and (no[0] != 0 or eo[0] != 0 or np.any(np.diff(n_bounds) < 0) or np.any(np.diff(e_bounds) < 0)):
        raise InconsistentBatchError("offsets must start at 0 and be non-decreasing within bounds")
    out = []
    for i in range(b):
        n0, n1 = n_bounds[i], n_bounds[i + 1]
        e0, e1 = e_bounds[i], e_bounds[i + 1]
        s = m.senders[e0:e1] - n0
        r = m.receivers[e0:e1] - n0
        if np.any((s < 0) | (s >= n1 - n0) | (r < 0) | (r >= n1 - n0)):
            raise InconsistentBatchError(f"member {i} has edges crossing a member boundary")
        out.append(Graph(bg.globals[i], m.nodes[n0:n1], m.edges[e0:e1], s, r, m.edge_types[e0:e1]))
    return out


def concat_attributes(g1: Graph, g2: Graph) -> Graph:
    """Concatenate edge, node and global attributes of two same-structure graphs."""
    if not g1.same_structure(g2) or g1.n_edge != g2.n_edge:
        raise IncompatibleStructureError("graphs differ in structure")
    return g1.replace(
        globals=np.concatenate([g1.globals, g2.globals]),
        nodes=np.concatenate([g1.nodes, g2.nodes], axis=1),
        edges=np.concatenate([g1.edges, g2.edges], axis=1),
    )


def fully_connected(n: int, self_edges: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Sender and receiver arrays of a complete directed graph on ``n`` nodes."""
    s, r = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    s, r = s.reshape(-1), r.reshape(-1)
    if not self_edges:
        keep = s != r
        s, r = s[keep], r[keep]
    return s.astype(np.int64), r.astype(np.int64)


def add_master_node(g: Graph, attr: Sequence[float] | None = None) -> Graph:
    """Append one node wired to and from every existing node.

    Realizes an MPNN-style master node inside ``V`` instead of as engine
    logic.  New edges get zero attributes.
    """
    n = g.n_node
    new_attr = np.zeros(g.node_dim) if attr is None else np.asarray(attr, dtype=np.float64)
    others = np.arange(n)
    master = np.full(n, n)
    return Graph(
        g.globals,
        np.vstack([g.nodes, new_attr[None, :]]),
        np.vstack([g.edges, np.zeros((2 * n, g.edge_dim))]),
        np.concatenate([g.senders, others, master]),
        np.concatenate([g.receivers, master, others]),
        np.concatenate([g.edge_types, np.zeros(2 * n, dtype=np.int64)]),
    )


# -- serialization ---------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    return {
        "u": g.globals.tolist(),
        "nodes": g.nodes.tolist(),
        "edges": [
            {"attr": g.edges[k].tolist(), "sender": int(g.senders[k]),
             "receiver": int(g.receivers[k]), "type": int(g.edge_types[k])}
            for k in range(g.n_edge)
        ],
    }


def graph_from_dict(d: Mapping[str, Any], node_dim: int | None = None,
                    edge_dim: int | None = None) -> Graph:
    if not isinstance(d, Mapping):
        raise GraphParseError("graph must be a JSON object")
    for key in ("u", "nodes", "edges"):
        if key not in d:
            raise GraphParseError(f"missing key {key!r}")
        if not isinstance(d[key], list):
            raise GraphParseError(f"key {key!r} must be an array")
    edges = []
    for k, e in enumerate(d["edges"]):
        if not isinstance(e, Mapping):
            raise GraphParseError(f"edge {k} must be an object")
        for key in ("attr", "sender", "receiver"):
            if key not in e:
                raise GraphParseError(f"edge {k} missing {key!r}")
        edges.append((e["attr"], e["sender"], e["receiver"], e.get("type", 0)))
    problems = validate(d)
    if problems:
        raise GraphParseError("; ".join(problems))
    return Graph.from_lists(d["u"], d["nodes"], edges, node_dim=node_dim, edge_dim=edge_dim)


def serialize(g: Graph) -> str:
    # json emits repr(float), the shortest round-trip decimal for binary64.
    return json.dumps(graph_to_dict(g), separators=(",", ":"), allow_nan=False)


def deserialize(text: str) -> Graph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(exc.msg, exc.pos) from exc
    return graph_from_dict(data)
