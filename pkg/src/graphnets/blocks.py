"""One graph network block: edge, node and global updates with aggregations.

The block runs the six steps in order::

    1. e'_k  = phi_e(e_k, v_rk, v_sk, u)        per edge
    2. ebar'_i = rho_ev({e'_k : r_k = i})        per node
    3. v'_i  = phi_v(ebar'_i, v_i, u)            per node
    4. ebar' = rho_eu(E')                        per graph
    5. vbar' = rho_vu(V')                        per graph
    6. u'    = phi_u(ebar', vbar', u)            per graph

Each ``phi`` is described by a :class:`PhiSignature` naming which inputs it
reads and its functional form.  A ``phi`` with form ``"none"`` passes its
input elements through unchanged.

All aggregations fold rows in a canonical (value-sorted) order, so a block
is bit-exactly permutation equivariant and gives bit-identical results on a
disjoint-union batch and on its members.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .graph import BatchedGraph, Graph
from .nn import GRUSpec, MLPSpec, ParameterStore, gru_apply, gru_init, mlp_apply, mlp_init

# Instrumentation: rows processed by each update function, and empty-max events.
counters: collections.Counter = collections.Counter()

EDGE_INPUTS = ("edge", "receiver", "sender", "global")
NODE_INPUTS = ("edges", "node", "global")
GLOBAL_INPUTS = ("edges", "nodes", "global")

EDGE_FORMS = ("none", "identity", "mlp", "typed_mlp", "sender_plus", "attention", "struct2vec")
NODE_FORMS = ("none", "identity", "mlp", "gru", "embed_mlp", "two_stage", "struct2vec")
GLOBAL_FORMS = ("none", "identity", "mlp")
AGGREGATORS = ("sum", "mean", "max", "attention")
ATTENTION_KINDS = ("dot", "euclidean", "neural")

LOGIT_CLAMP = 30.0


class ConfigError(ValueError):
    pass


@dataclass
class PhiSignature:
    """Inputs and functional form of one update function.

    ``widths`` are the MLP layer widths (last = output dim).  Form-specific
    extras: ``embed_widths`` (first-stage network for ``embed_mlp`` and
    ``two_stage``), ``n_types`` (``typed_mlp``), and the attention fields.
    """

    form: str = "none"
    inputs: tuple[str, ...] = ()
    widths: list[int] = field(default_factory=list)
    activation: str = "relu"
    embed_widths: list[int] = field(default_factory=list)
    n_types: int = 1
    attention: str = "dot"
    heads: int = 1
    key_widths: list[int] = field(default_factory=list)
    relative: bool = False

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, d: dict) -> "PhiSignature":
        d = dict(d)
        d["inputs"] = tuple(d.get("inputs", ()))
        return cls(**d)


@dataclass
class GNConfig:
    """Declarative description of one block.

    ``in_dims`` is ``(edge, node, global)`` attribute widths of the input
    graph.
    """

    in_dims: tuple[int, int, int]
    phi_e: PhiSignature = field(default_factory=PhiSignature)
    phi_v: PhiSignature = field(default_factory=PhiSignature)
    phi_u: PhiSignature = field(default_factory=PhiSignature)
    rho_ev: str = "sum"
    rho_eu: str = "sum"
    rho_vu: str = "sum"
    name: str = "custom"

    def __post_init__(self):
        self.in_dims = tuple(int(d) for d in self.in_dims)
        check_config(self)

    # -- derived dims --
    @property
    def edge_out(self) -> int:
        de, dv, du = self.in_dims
        f = self.phi_e
        if f.form in ("none", "attention"):
            return de
        if f.form == "identity":
            return sum({"edge": de, "receiver": dv, "sender": dv, "global": du}[i] for i in f.inputs)
        if f.form == "sender_plus":
            return dv
        return f.widths[-1]

    @property
    def edge_agg(self) -> int:
        """Width of the per-node aggregate ``ebar'_i``."""
        if self.phi_e.form == "attention":
            return self.phi_e.heads * self.attention_value_dim
        return self.edge_out

    @property
    def attention_value_dim(self) -> int:
        return self.in_dims[0] if self.phi_e.relative else self.phi_e.widths[-1]

    @property
    def node_out(self) -> int:
        de, dv, du = self.in_dims
        f = self.phi_v
        if f.form == "none":
            return dv
        if f.form == "identity":
            return sum({"edges": self.edge_agg, "node": dv, "global": du}[i] for i in f.inputs)
        if f.form == "gru":
            return dv
        return f.widths[-1]

    @property
    def global_out(self) -> int:
        du = self.in_dims[2]
        f = self.phi_u
        if f.form == "none":
            return du
        if f.form == "identity":
            return sum({"edges": self.edge_out, "nodes": self.node_out, "global": du}[i] for i in f.inputs)
        return f.widths[-1]

    @property
    def out_dims(self) -> tuple[int, int, int]:
        return (self.edge_out, self.node_out, self.global_out)

    def to_json(self) -> dict:
        return {
            "name": self.name, "in_dims": list(self.in_dims),
            "phi_e": self.phi_e.to_json(), "phi_v": self.phi_v.to_json(), "phi_u": self.phi_u.to_json(),
            "rho_ev": self.rho_ev, "rho_eu": self.rho_eu, "rho_vu": self.rho_vu,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GNConfig":
        return cls(tuple(d["in_dims"]), PhiSignature.from_json(d["phi_e"]), PhiSignature.from_json(d["phi_v"]),
                   PhiSignature.from_json(d["phi_u"]), d["rho_ev"], d["rho_eu"], d["rho_vu"], d.get("name", "custom"))


def check_config(cfg: GNConfig) -> None:
    de, dv, du = cfg.in_dims
    if min(cfg.in_dims) < 0:
        raise ConfigError(f"negative input dims {cfg.in_dims}")
    for phi, forms, inputs, which in ((cfg.phi_e, EDGE_FORMS, EDGE_INPUTS, "phi_e"),
                                      (cfg.phi_v, NODE_FORMS, NODE_INPUTS, "phi_v"),
                                      (cfg.phi_u, GLOBAL_FORMS, GLOBAL_INPUTS, "phi_u")):
        if phi.form not in forms:
            raise ConfigError(f"{which}: form {phi.form!r} not one of {forms}")
        bad = [i for i in phi.inputs if i not in inputs]
        if bad:
            raise ConfigError(f"{which}: unknown inputs {bad}; valid are {inputs}")
        if phi.form in ("mlp", "typed_mlp", "embed_mlp", "two_stage", "attention", "struct2vec") and not phi.widths:
            raise ConfigError(f"{which}: form {phi.form!r} needs widths")
        if phi.form in ("embed_mlp", "two_stage") and not phi.embed_widths:
            raise ConfigError(f"{which}: form {phi.form!r} needs embed_widths")
    for rho in (cfg.rho_ev, cfg.rho_eu, cfg.rho_vu):
        if rho not in AGGREGATORS:
            raise ConfigError(f"unknown aggregator {rho!r}")
    attn = cfg.phi_e.form == "attention"
    if attn != (cfg.rho_ev == "attention"):
        raise ConfigError("attention-factored phi_e must be paired with rho_ev='attention'")
    if cfg.rho_eu == "attention" or cfg.rho_vu == "attention":
        raise ConfigError("attention aggregation is only defined for edges -> nodes")
    if attn:
        if cfg.phi_e.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {cfg.phi_e.attention!r}")
        if cfg.phi_e.heads < 1:
            raise ConfigError("heads must be >= 1")
        if cfg.phi_e.attention in ("dot", "neural") and not cfg.phi_e.key_widths:
            raise ConfigError("dot/neural attention needs key_widths")
        if cfg.phi_e.relative and cfg.phi_e.widths[-1] != de:
            raise ConfigError("relative attention: value width must equal edge dim")
    if cfg.phi_e.form == "sender_plus" and cfg.phi_e.widths and cfg.phi_e.widths[-1] != dv:
        raise ConfigError("sender_plus: f(e) must have the node width")
    if (cfg.phi_e.form == "struct2vec") != (cfg.phi_v.form == "struct2vec"):
        raise ConfigError("struct2vec must be selected for both phi_e and phi_v")
    if cfg.phi_e.form == "struct2vec" and cfg.phi_e.widths[-1] != de:
        raise ConfigError("struct2vec: shared network must map edge width to itself")
    if cfg.phi_e.form == "typed_mlp" and cfg.phi_e.n_types < 1:
        raise ConfigError("typed_mlp needs n_types >= 1")


# -- batched tensor view ---------------------------------------------------

@dataclass
class TensorGraph:
    """Disjoint-union graph whose attributes are :class:`Tensor` values.

    ``globals`` has one row per member graph.
    """

    nodes: Tensor
    edges: Tensor
    globals: Tensor
    senders: np.ndarray
    receivers: np.ndarray
    edge_types: np.ndarray
    n_node: np.ndarray
    n_edge: np.ndarray

    @property
    def n_graphs(self) -> int:
        return len(self.n_node)

    @property
    def node_graph(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_graphs), self.n_node)

    @property
    def edge_graph(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_graphs), self.n_edge)

    @property
    def total_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def total_edges(self) -> int:
        return int(len(self.senders))

    def replace(self, **changes) -> "TensorGraph":
        return replace(self, **changes)

    @classmethod
    def from_graph(cls, g: Graph | BatchedGraph) -> "TensorGraph":
        if isinstance(g, BatchedGraph):
            m = g.merged
            u = np.stack(g.globals) if g.globals else np.zeros((0, 0))
            return cls(Tensor(m.nodes), Tensor(m.edges), Tensor(u.reshape(len(g.globals), -1)),
                       m.senders, m.receivers, m.edge_types, g.n_node, g.n_edge)
        return cls(Tensor(g.nodes), Tensor(g.edges), Tensor(g.globals[None, :]), g.senders, g.receivers,
                   g.edge_types, np.array([g.n_node]), np.array([g.n_edge]))

    @classmethod
    def from_graphs(cls, gs: Sequence[Graph]) -> "TensorGraph":
        from .graph import batch
        return cls.from_graph(batch(list(gs)))

    def to_graph(self) -> Graph:
        if self.n_graphs != 1:
            raise ValueError("to_graph needs exactly one member; use to_batched")
        return Graph(self.globals.data[0], self.nodes.data, self.edges.data, self.senders, self.receivers,
                     self.edge_types)

    def to_batched(self) -> BatchedGraph:
        merged = Graph(np.zeros(0), self.nodes.data, self.edges.data, self.senders, self.receivers,
                       self.edge_types)
        no = np.concatenate([[0], np.cumsum(self.n_node)[:-1]]).astype(np.int64)
        eo = np.concatenate([[0], np.cumsum(self.n_edge)[:-1]]).astype(np.int64)
        return BatchedGraph(merged, no, eo, tuple(row.copy() for row in self.globals.data))


def concat_tensor_graphs(a: TensorGraph, b: TensorGraph) -> TensorGraph:
    if (not np.array_equal(a.senders, b.senders) or not np.array_equal(a.receivers, b.receivers)
            or not np.array_equal(a.n_node, b.n_node)):
        from .graph import IncompatibleStructureError
        raise IncompatibleStructureError("graphs differ in structure")
    return a.replace(nodes=ad.concat([a.nodes, b.nodes]), edges=ad.concat([a.edges, b.edges]),
                     globals=ad.concat([a.globals, b.globals]))


# -- aggregation -----------------------------------------------------------

def aggregate(kind: str, x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Permutation-invariant reduction of rows by segment; empty segments give zeros."""
    if kind == "sum":
        return ad.segment_sum(x, segment_ids, num_segments)
    if kind == "mean":
        return ad.segment_mean(x, segment_ids, num_segments)
    if kind == "max":
        empty = int(np.sum(ad.segment_counts(segment_ids, num_segments) == 0))
        if empty and x.shape[1]:
            counters["empty_max"] += empty
        return ad.segment_max(x, segment_ids, num_segments)
    raise ConfigError(f"aggregator {kind!r} cannot reduce plain rows")


def aggregate_edges_per_node(edges_out: Tensor, receivers: np.ndarray, n_nodes: int, rho_ev: str) -> Tensor:
    return aggregate(rho_ev, edges_out, receivers, n_nodes)


def aggregate_global(tg: TensorGraph, edges_out: Tensor, nodes_out: Tensor, rho_eu: str,
                     rho_vu: str) -> tuple[Tensor, Tensor]:
    return (aggregate(rho_eu, edges_out, tg.edge_graph, tg.n_graphs),
            aggregate(rho_vu, nodes_out, tg.node_graph, tg.n_graphs))


def attention_aggregate(pairs: Sequence[tuple[Tensor, Tensor]], receivers: np.ndarray, n_nodes: int) -> Tensor:
    """Per head ``sum_k a_k b_k / sum_k a_k`` over each receiver's edges, heads concatenated."""
    heads = []
    for a, b in pairs:
        num = ad.segment_sum(ad.mul_rows(a, b), receivers, n_nodes)
        den = ad.segment_sum(a, receivers, n_nodes)
        if np.any(den.data < 0):
            raise ArithmeticError("negative attention normalizer")
        heads.append(ad.div_rows(num, den))
    return heads[0] if len(heads) == 1 else ad.concat(heads)


def normalized_attention(a: Tensor, receivers: np.ndarray, n_nodes: int) -> np.ndarray:
    """Normalized weights ``a_k / sum_{l: r_l = r_k} a_l`` (diagnostic, no tape)."""
    den = ad._segment_sum_data(a.data, np.asarray(receivers), n_nodes)
    return a.data[:, 0] / den[receivers, 0]


# -- parameter initialization ----------------------------------------------

def _phi_in_dim(cfg: GNConfig, which: str) -> int:
    de, dv, du = cfg.in_dims
    if which == "e":
        sizes = {"edge": de, "receiver": dv, "sender": dv, "global": du}
        return sum(sizes[i] for i in cfg.phi_e.inputs)
    if which == "v":
        sizes = {"edges": cfg.edge_agg, "node": dv, "global": du}
        return sum(sizes[i] for i in cfg.phi_v.inputs)
    sizes = {"edges": cfg.edge_out, "nodes": cfg.node_out, "global": du}
    return sum(sizes[i] for i in cfg.phi_u.inputs)


def _mlp(in_dim: int, phi: PhiSignature, widths: list[int] | None = None) -> MLPSpec:
    return MLPSpec(in_dim, list(widths if widths is not None else phi.widths), phi.activation)


def init_block(cfg: GNConfig, params: ParameterStore, prefix: str, rng: np.random.Generator) -> None:
    """Add every parameter the block needs to ``params`` under ``prefix``."""
    de, dv, du = cfg.in_dims
    fe, fv, fu = cfg.phi_e, cfg.phi_v, cfg.phi_u
    if fe.form == "mlp":
        mlp_init(_mlp(_phi_in_dim(cfg, "e"), fe), params, f"{prefix}/edge", rng)
    elif fe.form == "typed_mlp":
        for t in range(fe.n_types):
            mlp_init(_mlp(_phi_in_dim(cfg, "e"), fe), params, f"{prefix}/edge/type{t}", rng)
    elif fe.form == "sender_plus":
        mlp_init(_mlp(de, fe), params, f"{prefix}/edge", rng)
    elif fe.form == "struct2vec":
        mlp_init(_mlp(de, fe), params, f"{prefix}/s2v", rng)
    elif fe.form == "attention":
        for h in range(fe.heads):
            p = f"{prefix}/attn/h{h}"
            if fe.attention == "dot":
                mlp_init(_mlp(dv, fe, fe.key_widths), params, f"{p}/query", rng)
                mlp_init(_mlp(dv, fe, fe.key_widths), params, f"{p}/key", rng)
            elif fe.attention == "euclidean":
                mlp_init(_mlp(dv, fe, fe.key_widths or fe.widths), params, f"{p}/embed", rng)
            else:
                mlp_init(_mlp(dv, fe, fe.key_widths), params, f"{p}/embed", rng)
                mlp_init(MLPSpec(2 * fe.key_widths[-1], [1]), params, f"{p}/score", rng)
            mlp_init(_mlp(dv, fe), params, f"{p}/value", rng)
    if fv.form == "mlp":
        mlp_init(_mlp(_phi_in_dim(cfg, "v"), fv), params, f"{prefix}/node", rng)
    elif fv.form == "gru":
        gru_init(GRUSpec(_phi_in_dim(cfg, "v") - (dv if "node" in fv.inputs else 0), dv), params,
                 f"{prefix}/node", rng)
    elif fv.form == "embed_mlp":
        mlp_init(_mlp(dv, fv, fv.embed_widths), params, f"{prefix}/node/embed", rng)
        in_dim = _phi_in_dim(cfg, "v") - (dv if "node" in fv.inputs else 0) + fv.embed_widths[-1]
        mlp_init(_mlp(in_dim, fv), params, f"{prefix}/node", rng)
    elif fv.form == "two_stage":
        mlp_init(_mlp(_phi_in_dim(cfg, "v"), fv, fv.embed_widths), params, f"{prefix}/node/local", rng)
        mlp_init(_mlp(2 * fv.embed_widths[-1], fv), params, f"{prefix}/node", rng)
    if fu.form == "mlp":
        mlp_init(_mlp(_phi_in_dim(cfg, "u"), fu), params, f"{prefix}/global", rng)


# -- the six steps ---------------------------------------------------------

def _cat(parts: list[Tensor], rows: int) -> Tensor:
    if not parts:
        return Tensor(np.zeros((rows, 0)))
    return parts[0] if len(parts) == 1 else ad.concat(parts)


def _edge_inputs(tg: TensorGraph, names: Sequence[str]) -> Tensor:
    parts = []
    for name in names:
        if name == "edge":
            parts.append(tg.edges)
        elif name == "receiver":
            parts.append(ad.gather(tg.nodes, tg.receivers))
        elif name == "sender":
            parts.append(ad.gather(tg.nodes, tg.senders))
        else:
            parts.append(ad.gather(tg.globals, tg.edge_graph))
    return _cat(parts, tg.total_edges)


def edge_update_all(tg: TensorGraph, cfg: GNConfig, params: ParameterStore, prefix: str = "gn") -> Tensor:
    """Step 1: ``e'_k`` for every edge, in edge order."""
    fe = cfg.phi_e
    counters["edge_updates"] += tg.total_edges
    if fe.form == "none":
        return tg.edges
    if fe.form == "identity":
        return _edge_inputs(tg, fe.inputs)
    if fe.form == "mlp":
        return mlp_apply(_mlp(_phi_in_dim(cfg, "e"), fe), params, _edge_inputs(tg, fe.inputs), f"{prefix}/edge")
    if fe.form == "typed_mlp":
        x = _edge_inputs(tg, fe.inputs)
        if tg.total_edges and (tg.edge_types.max() >= fe.n_types or tg.edge_types.min() < 0):
            raise ShapeError(f"edge type out of range for {fe.n_types} banks")
        spec = _mlp(_phi_in_dim(cfg, "e"), fe)
        out = None
        for t in range(fe.n_types):
            mask = Tensor((tg.edge_types == t).astype(np.float64)[:, None])
            term = ad.mul_rows(mask, mlp_apply(spec, params, x, f"{prefix}/edge/type{t}"))
            out = term if out is None else ad.add(out, term)
        return out
    if fe.form == "sender_plus":
        f = mlp_apply(_mlp(cfg.in_dims[0], fe), params, tg.edges, f"{prefix}/edge")
        return ad.add(ad.gather(tg.nodes, tg.senders), f)
    raise ConfigError(f"edge form {fe.form!r} is not a per-edge vector update")


def attention_edge_update(tg: TensorGraph, cfg: GNConfig, params: ParameterStore,
                          prefix: str = "gn") -> list[tuple[Tensor, Tensor]]:
    """Step 1 for attention-factored blocks: per head, ``(a'_k, b'_k)`` per edge.

    ``a'_k`` is an ``(N_e, 1)`` positive weight and ``b'_k`` the value rows.
    """
    fe = cfg.phi_e
    dv = cfg.in_dims[1]
    counters["edge_updates"] += tg.total_edges
    pairs = []
    for h in range(fe.heads):
        p = f"{prefix}/attn/h{h}"
        if fe.attention == "dot":
            spec = _mlp(dv, fe, fe.key_widths)
            q = mlp_apply(spec, params, tg.nodes, f"{p}/query")
            k = mlp_apply(spec, params, tg.nodes, f"{p}/key")
            logit = ad.row_dot(ad.gather(q, tg.receivers), ad.gather(k, tg.senders))
        elif fe.attention == "euclidean":
            emb = mlp_apply(_mlp(dv, fe, fe.key_widths or fe.widths), params, tg.nodes, f"{p}/embed")
            diff = ad.sub(ad.gather(emb, tg.receivers), ad.gather(emb, tg.senders))
            logit = ad.scale(ad.row_dot(diff, diff), -1.0)
        else:
            emb = mlp_apply(_mlp(dv, fe, fe.key_widths), params, tg.nodes, f"{p}/embed")
            both = ad.concat([ad.gather(emb, tg.receivers), ad.gather(emb, tg.senders)])
            logit = mlp_apply(MLPSpec(2 * fe.key_widths[-1], [1]), params, both, f"{p}/score")
        a = ad.exp(ad.clip(logit, -LOGIT_CLAMP, LOGIT_CLAMP))
        b = ad.gather(mlp_apply(_mlp(dv, fe), params, tg.nodes, f"{p}/value"), tg.senders)
        if fe.relative:
            b = ad.add(b, tg.edges)
        pairs.append((a, b))
    return pairs


def struct2vec_messages(tg: TensorGraph) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(k, l)``: edge ``l`` enters the sender of ``k`` and is not its reverse.

    Uses the summation-side condition ``r_l = s_k, s_l != r_k``.
    """
    incoming: dict[int, list[int]] = collections.defaultdict(list)
    for l, r in enumerate(tg.receivers):
        incoming[int(r)].append(l)
    ks, ls = [], []
    for k in range(tg.total_edges):
        for l in incoming.get(int(tg.senders[k]), ()):
            if tg.senders[l] != tg.receivers[k]:
                ks.append(k)
                ls.append(l)
    return np.array(ks, dtype=np.int64), np.array(ls, dtype=np.int64)


def s2v_aggregate(tg: TensorGraph) -> Tensor:
    """``epsbar_k`` for every edge: sum of current edge attributes feeding its sender."""
    ks, ls = struct2vec_messages(tg)
    return ad.segment_sum(ad.gather(tg.edges, ls), ks, tg.total_edges)


def node_update_all(tg: TensorGraph, edge_agg: Tensor, cfg: GNConfig, params: ParameterStore,
                    prefix: str = "gn") -> Tensor:
    """Step 3: ``v'_i`` for every node."""
    fv = cfg.phi_v
    counters["node_updates"] += tg.total_nodes
    if fv.form == "none":
        return tg.nodes

    def gathered(names):
        parts = []
        for name in names:
            if name == "edges":
                parts.append(edge_agg)
            elif name == "node":
                parts.append(tg.nodes)
            else:
                parts.append(ad.gather(tg.globals, tg.node_graph))
        return _cat(parts, tg.total_nodes)

    if fv.form == "identity":
        return gathered(fv.inputs)
    if fv.form == "mlp":
        return mlp_apply(_mlp(_phi_in_dim(cfg, "v"), fv), params, gathered(fv.inputs), f"{prefix}/node")
    others = [i for i in fv.inputs if i != "node"]
    if fv.form == "gru":
        x = gathered(others)
        return gru_apply(GRUSpec(x.shape[1], cfg.in_dims[1]), params, x, tg.nodes, f"{prefix}/node")
    if fv.form == "embed_mlp":
        emb = mlp_apply(_mlp(cfg.in_dims[1], fv, fv.embed_widths), params, tg.nodes, f"{prefix}/node/embed")
        x = _cat([gathered(others), emb] if others else [emb], tg.total_nodes)
        return mlp_apply(_mlp(x.shape[1], fv), params, x, f"{prefix}/node")
    if fv.form == "two_stage":
        local = mlp_apply(_mlp(_phi_in_dim(cfg, "v"), fv, fv.embed_widths), params, gathered(fv.inputs),
                          f"{prefix}/node/local")
        pooled = ad.segment_max(local, tg.node_graph, tg.n_graphs)
        x = ad.concat([local, ad.gather(pooled, tg.node_graph)])
        return mlp_apply(_mlp(x.shape[1], fv), params, x, f"{prefix}/node")
    raise ConfigError(f"node form {fv.form!r} not handled here")


def global_update(edge_bar: Tensor, node_bar: Tensor, u: Tensor, cfg: GNConfig, params: ParameterStore,
                  prefix: str = "gn") -> Tensor:
    """Step 6: ``u'`` for every member graph."""
    fu = cfg.phi_u
    counters["global_updates"] += u.shape[0]
    if fu.form == "none":
        return u
    parts = [{"edges": edge_bar, "nodes": node_bar, "global": u}[i] for i in fu.inputs]
    x = _cat(parts, u.shape[0])
    if fu.form == "identity":
        return x
    return mlp_apply(_mlp(_phi_in_dim(cfg, "u"), fu), params, x, f"{prefix}/global")


def _step(n: int, what: str):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc_type is ShapeError:
                raise ShapeError(f"step {n} ({what}): {exc}") from exc
            return False
    return _Guard()


def _check_dims(tg: TensorGraph, cfg: GNConfig) -> None:
    got = (tg.edges.shape[1], tg.nodes.shape[1], tg.globals.shape[1])
    if got != cfg.in_dims:
        raise ShapeError(f"graph dims (edge, node, global) = {got}, block expects {cfg.in_dims}")


def apply_tensor_block(tg: TensorGraph, cfg: GNConfig, params: ParameterStore, prefix: str = "gn") -> TensorGraph:
    _check_dims(tg, cfg)
    fe, fv, fu = cfg.phi_e, cfg.phi_v, cfg.phi_u
    n_v = tg.total_nodes

    if fe.form == "struct2vec":
        spec = _mlp(cfg.in_dims[0], fe)
        with _step(1, "edge update"):
            counters["edge_updates"] += tg.total_edges
            edges_out = mlp_apply(spec, params, s2v_aggregate(tg), f"{prefix}/s2v")
        with _step(2, "edge aggregation per node"):
            agg = ad.segment_sum(edges_out, tg.receivers, n_v)
        with _step(3, "node update"):
            counters["node_updates"] += n_v
            nodes_out = mlp_apply(spec, params, agg, f"{prefix}/s2v")
    else:
        with _step(1, "edge update"):
            if fe.form == "attention":
                pairs = attention_edge_update(tg, cfg, params, prefix)
                edges_out = tg.edges
            else:
                edges_out = edge_update_all(tg, cfg, params, prefix)
        with _step(2, "edge aggregation per node"):
            if "edges" in fv.inputs:
                if fe.form == "attention":
                    agg = attention_aggregate(pairs, tg.receivers, n_v)
                else:
                    agg = aggregate_edges_per_node(edges_out, tg.receivers, n_v, cfg.rho_ev)
            else:
                agg = Tensor(np.zeros((n_v, cfg.edge_agg)))
        with _step(3, "node update"):
            nodes_out = node_update_all(tg, agg, cfg, params, prefix)

    edge_bar = node_bar = None
    with _step(4, "edge aggregation globally"):
        if "edges" in fu.inputs:
            edge_bar = aggregate(cfg.rho_eu, edges_out, tg.edge_graph, tg.n_graphs)
    with _step(5, "node aggregation globally"):
        if "nodes" in fu.inputs:
            node_bar = aggregate(cfg.rho_vu, nodes_out, tg.node_graph, tg.n_graphs)
    with _step(6, "global update"):
        globals_out = global_update(edge_bar, node_bar, tg.globals, cfg, params, prefix)
    return tg.replace(nodes=nodes_out, edges=edges_out, globals=globals_out)


def apply_block(g, cfg: GNConfig, params: ParameterStore, prefix: str = "gn"):
    """Run one block on a :class:`Graph`, :class:`BatchedGraph` or :class:`TensorGraph`.

    Returns the same kind of object, with unchanged senders/receivers.
    """
    if isinstance(g, TensorGraph):
        return apply_tensor_block(g, cfg, params, prefix)
    out = apply_tensor_block(TensorGraph.from_graph(g), cfg, params, prefix)
    return out.to_batched() if isinstance(g, BatchedGraph) else out.to_graph()
