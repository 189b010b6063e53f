"""Plain-numpy reference computations, written independently of the engine."""

import re

import numpy as np


def relu(x):
    return np.maximum(x, 0.0)


def mlp(params, prefix, x, activation=relu):
    """Stack of affine layers named ``{prefix}/l{i}/w|b``; identity on the last."""
    layer = re.compile(re.escape(prefix) + r"/l\d+/w$")
    n = sum(1 for k in params.names(prefix) if layer.match(k))
    h = np.asarray(x, dtype=np.float64)
    for i in range(n):
        h = h @ params[f"{prefix}/l{i}/w"].data + params[f"{prefix}/l{i}/b"].data
        if i < n - 1:
            h = activation(h)
    return h


def segment_sum_loop(rows, ids, n):
    out = np.zeros((n, rows.shape[1]))
    for row, i in zip(rows, ids):
        out[i] += row
    return out


def full_gn(g, params, prefix="gn"):
    """Hand composition of the six block steps for the full_gn preset."""
    u = g.globals
    e_in = np.hstack([g.edges, g.nodes[g.receivers], g.nodes[g.senders], np.tile(u, (g.n_edge, 1))])
    e_new = mlp(params, f"{prefix}/edge", e_in)
    agg = segment_sum_loop(e_new, g.receivers, g.n_node)
    v_new = mlp(params, f"{prefix}/node", np.hstack([agg, g.nodes, np.tile(u, (g.n_node, 1))]))
    u_new = mlp(params, f"{prefix}/global", np.concatenate([e_new.sum(axis=0), v_new.sum(axis=0), u])[None])[0]
    return e_new, v_new, u_new


def deep_set(g, params, prefix="gn"):
    v_new = mlp(params, f"{prefix}/node", np.hstack([g.nodes, np.tile(g.globals, (g.n_node, 1))]))
    return v_new, mlp(params, f"{prefix}/global", v_new.sum(axis=0)[None])[0]


def relation_network(g, params, prefix="gn"):
    e_new = mlp(params, f"{prefix}/edge", np.hstack([g.nodes[g.receivers], g.nodes[g.senders]]))
    return e_new, mlp(params, f"{prefix}/global", e_new.sum(axis=0)[None])[0]


def commnet(g, params, prefix="gn"):
    e_new = mlp(params, f"{prefix}/edge", g.nodes[g.senders])
    agg = np.zeros((g.n_node, e_new.shape[1]))
    for i in range(g.n_node):
        incoming = [k for k in range(g.n_edge) if g.receivers[k] == i]
        if incoming:
            agg[i] = e_new[incoming].sum(axis=0) / len(incoming)
    emb = mlp(params, f"{prefix}/node/embed", g.nodes)
    return e_new, mlp(params, f"{prefix}/node", np.hstack([agg, emb]))


def struct2vec(g, params, prefix="gn"):
    """Per-edge enumeration of l with r_l = s_k and s_l != r_k."""
    eps = np.zeros_like(g.edges)
    for k in range(g.n_edge):
        for l in range(g.n_edge):
            if g.receivers[l] == g.senders[k] and g.senders[l] != g.receivers[k]:
                eps[k] += g.edges[l]
    e_new = mlp(params, f"{prefix}/s2v", eps)
    agg = segment_sum_loop(e_new, g.receivers, g.n_node)
    return e_new, mlp(params, f"{prefix}/s2v", agg)
