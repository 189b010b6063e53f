"""Preset block configurations for the published architectures expressible as GN blocks."""

from __future__ import annotations

from typing import Any, Callable, Mapping

from .blocks import GNConfig, PhiSignature

DEFAULT_HIDDEN = [16, 16]
DEFAULT_LATENT = 16


def _dims(dims: Mapping[str, int] | tuple) -> tuple[int, int, int]:
    if isinstance(dims, Mapping):
        return (int(dims.get("edge", 0)), int(dims.get("node", 0)), int(dims.get("global", 0)))
    return tuple(int(d) for d in dims)  # type: ignore[return-value]


class _Hyper:
    def __init__(self, hp: Mapping[str, Any] | None):
        self.hp = dict(hp or {})

    def hidden(self) -> list[int]:
        return list(self.hp.get("hidden", DEFAULT_HIDDEN))

    def out(self, key: str, default: int | None = None) -> int | None:
        latent = self.hp.get("latent", DEFAULT_LATENT)
        return self.hp.get(key, latent if default is None else default)

    def widths(self, key: str) -> list[int]:
        return self.hidden() + [self.out(key)]

    def get(self, key: str, default: Any) -> Any:
        return self.hp.get(key, default)


def _mlp(inputs: tuple[str, ...], widths: list[int], **kw) -> PhiSignature:
    return PhiSignature(form="mlp", inputs=inputs, widths=widths, **kw)


def full_gn(d, h: _Hyper) -> GNConfig:
    return GNConfig(d,
                    _mlp(("edge", "receiver", "sender", "global"), h.widths("edge_out")),
                    _mlp(("edges", "node", "global"), h.widths("node_out")),
                    _mlp(("edges", "nodes", "global"), h.widths("global_out")),
                    rho_ev=h.get("rho_ev", "sum"), rho_eu=h.get("rho_eu", "sum"), rho_vu=h.get("rho_vu", "sum"))


def interaction_network(d, h: _Hyper) -> GNConfig:
    phi_u = PhiSignature()
    if h.get("global_output", False):
        phi_u = _mlp(("nodes", "global"), h.widths("global_out"))
    return GNConfig(d,
                    _mlp(("edge", "receiver", "sender"), h.widths("edge_out")),
                    _mlp(("edges", "node", "global"), h.widths("node_out")),
                    phi_u)


def mpnn(d, h: _Hyper) -> GNConfig:
    # Readout R: phi_u over summed nodes only.
    return GNConfig(d,
                    _mlp(("edge", "receiver", "sender"), h.widths("edge_out")),
                    _mlp(("edges", "node"), h.widths("node_out")),
                    _mlp(("nodes",), h.widths("global_out")))


def _attention(d, h: _Hyper, kind: str, heads: int, relative: bool = False,
               node_inputs: tuple[str, ...] = ("edges",)) -> GNConfig:
    value_out = d[0] if relative else h.out("value_dim", h.get("latent", DEFAULT_LATENT))
    phi_e = PhiSignature(form="attention", inputs=("receiver", "sender"), widths=h.hidden() + [value_out],
                         attention=kind, heads=heads, relative=relative,
                         key_widths=h.hidden() + [h.get("key_dim", 8)])
    return GNConfig(d, phi_e, _mlp(node_inputs, h.widths("node_out")), PhiSignature(), rho_ev="attention")


def nlnn_single(d, h):
    return _attention(d, h, "dot", 1)


def nlnn_multi(d, h):
    return _attention(d, h, "dot", h.get("heads", 2))


def vertex_attention(d, h):
    return _attention(d, h, "euclidean", 1, node_inputs=("edges", "node"))


def graph_attention(d, h):
    return _attention(d, h, "neural", h.get("heads", 2))


def relative_attention(d, h):
    return _attention(d, h, "dot", h.get("heads", 2), relative=True)


def relation_network(d, h: _Hyper) -> GNConfig:
    return GNConfig(d,
                    _mlp(("receiver", "sender"), h.widths("edge_out")),
                    PhiSignature(),
                    _mlp(("edges",), h.widths("global_out")))


def deep_set(d, h: _Hyper) -> GNConfig:
    return GNConfig(d,
                    PhiSignature(),
                    _mlp(("node", "global"), h.widths("node_out")),
                    _mlp(("nodes",), h.widths("global_out")))


def pointnet_style(d, h: _Hyper) -> GNConfig:
    phi_v = PhiSignature(form="two_stage", inputs=("node", "global"), widths=h.widths("node_out"),
                         embed_widths=h.widths("local_out"))
    return GNConfig(d, PhiSignature(), phi_v, _mlp(("nodes",), h.widths("global_out")), rho_vu="max")


def ggsnn(d, h: _Hyper) -> GNConfig:
    phi_e = PhiSignature(form="typed_mlp", inputs=("sender",), widths=h.widths("edge_out"),
                         n_types=h.get("n_edge_types", 2))
    return GNConfig(d, phi_e, PhiSignature(form="gru", inputs=("edges", "node")), PhiSignature())


def commnet(d, h: _Hyper) -> GNConfig:
    phi_v = PhiSignature(form="embed_mlp", inputs=("edges", "node"), widths=h.widths("node_out"),
                         embed_widths=h.widths("embed_out"))
    return GNConfig(d, _mlp(("sender",), h.widths("edge_out")), phi_v, PhiSignature(), rho_ev="mean")


def struct2vec(d, h: _Hyper) -> GNConfig:
    widths = h.hidden() + [d[0]]
    return GNConfig(d, PhiSignature(form="struct2vec", widths=widths),
                    PhiSignature(form="struct2vec", inputs=("edges",), widths=widths), PhiSignature())


def independent(d, h: _Hyper) -> GNConfig:
    """Per-element networks with no message passing (encoders/decoders).

    A ``None`` output width leaves that element kind untouched.
    """
    def part(inputs, key):
        if h.get(key, 0) is None:
            return PhiSignature()
        return _mlp(inputs, h.widths(key))
    return GNConfig(d, part(("edge",), "edge_out"), part(("node",), "node_out"), part(("global",), "global_out"))


def identity(d, h: _Hyper) -> GNConfig:
    return GNConfig(d)


PRESETS: dict[str, Callable[[tuple[int, int, int], _Hyper], GNConfig]] = {
    "full_gn": full_gn,
    "interaction_network": interaction_network,
    "mpnn": mpnn,
    "nlnn_single": nlnn_single,
    "nlnn_multi": nlnn_multi,
    "vertex_attention": vertex_attention,
    "graph_attention": graph_attention,
    "relative_attention": relative_attention,
    "relation_network": relation_network,
    "deep_set": deep_set,
    "pointnet_style": pointnet_style,
    "ggsnn": ggsnn,
    "commnet": commnet,
    "struct2vec": struct2vec,
    "independent": independent,
    "identity": identity,
}

# Presets that correspond to published architectures (excludes plumbing presets).
VARIANT_NAMES = [n for n in PRESETS if n not in ("independent", "identity")]


def make_variant(name: str, dims: Mapping[str, int] | tuple, hyperparams: Mapping[str, Any] | None = None) -> GNConfig:
    """Build the :class:`GNConfig` for a named preset.

    ``dims`` gives input widths as ``{"edge", "node", "global"}`` (or an
    ``(edge, node, global)`` tuple).  ``hyperparams`` may set ``hidden``,
    ``latent``, ``edge_out``/``node_out``/``global_out``, ``heads``,
    ``key_dim``, ``n_edge_types``, ``global_output`` and aggregator choices.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}")
    cfg = PRESETS[name](_dims(dims), _Hyper(hyperparams))
    cfg.name = name
    return cfg


def config_to_json(name: str, dims, hyperparams: Mapping[str, Any] | None = None) -> dict:
    d = _dims(dims)
    return {"preset": name, "dims": {"edge": d[0], "node": d[1], "global": d[2]},
            "hyperparams": dict(hyperparams or {})}


def config_from_json(d: Mapping[str, Any]) -> GNConfig:
    """Accept either a preset description or a fully spelled-out config."""
    if "preset" in d:
        return make_variant(d["preset"], d["dims"], d.get("hyperparams"))
    return GNConfig.from_json(dict(d))
