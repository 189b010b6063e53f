"""Multi-block architectures: sequential stacks, shared/unshared cores,
encode-process-decode and recurrent GN steps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .blocks import GNConfig, TensorGraph, apply_block, concat_tensor_graphs, init_block
from .graph import Graph, concat_attributes
from .nn import ParameterStore
from .variants import config_from_json


class CompositionError(ValueError):
    pass


def _chain_check(configs: Sequence[GNConfig]) -> None:
    for i in range(len(configs) - 1):
        if configs[i].out_dims != configs[i + 1].in_dims:
            raise CompositionError(
                f"block {i} outputs dims {configs[i].out_dims} but block {i + 1} expects {configs[i + 1].in_dims}")


@dataclass
class Sequential:
    """``GN_M(...GN_1(G))`` with one parameter prefix per block."""

    configs: list[GNConfig]
    prefixes: list[str]

    def init(self, params: ParameterStore, rng: np.random.Generator) -> None:
        for cfg, prefix in zip(self.configs, self.prefixes):
            if not params.names(prefix + "/"):
                init_block(cfg, params, prefix, rng)

    def __call__(self, g, params: ParameterStore):
        for cfg, prefix in zip(self.configs, self.prefixes):
            g = apply_block(g, cfg, params, prefix)
        return g


def compose_sequential(blocks: Sequence[GNConfig], prefix: str = "seq",
                       prefixes: Sequence[str] | None = None) -> Sequential:
    """Chain blocks; ``prefixes`` may repeat a name to share parameters."""
    blocks = list(blocks)
    if not blocks:
        raise CompositionError("need at least one block")
    _chain_check(blocks)
    names = list(prefixes) if prefixes is not None else [f"{prefix}/{i}" for i in range(len(blocks))]
    if len(names) != len(blocks):
        raise CompositionError("one prefix per block required")
    return Sequential(blocks, names)


@dataclass
class CoreSpec:
    """``M`` processing steps; ``shared`` reuses one block and parameter set."""

    configs: list[GNConfig]
    M: int = 1
    shared: bool = True

    def __post_init__(self):
        if self.M < 1:
            raise CompositionError("M must be >= 1")
        if self.shared and len(self.configs) != 1:
            raise CompositionError("a shared core takes exactly one config")
        if not self.shared and len(self.configs) != self.M:
            raise CompositionError(f"an unshared core needs M={self.M} configs, got {len(self.configs)}")
        if not self.shared:
            _chain_check(self.configs)

    def step_prefixes(self, prefix: str) -> list[str]:
        if self.shared:
            return [prefix] * self.M
        return [f"{prefix}/{m}" for m in range(self.M)]

    def init(self, params: ParameterStore, prefix: str, rng: np.random.Generator) -> None:
        seen = set()
        for cfg, p in zip(self.configs * (self.M if self.shared else 1), self.step_prefixes(prefix)):
            if p not in seen:
                init_block(cfg, params, p, rng)
                seen.add(p)


def run_core(g, core: CoreSpec, params: ParameterStore, prefix: str = "core", return_all: bool = False):
    if core.shared and core.M > 1 and core.configs[0].in_dims != core.configs[0].out_dims:
        raise CompositionError("a repeated shared core must map its dims to themselves")
    outputs = []
    for m, p in enumerate(core.step_prefixes(prefix)):
        cfg = core.configs[0] if core.shared else core.configs[m]
        g = apply_block(g, cfg, params, p)
        outputs.append(g)
    return outputs if return_all else g


OUTPUT_FOCI = ("edges", "nodes", "globals", "mix")


@dataclass
class EPDSpec:
    """Encoder, core and decoder.

    With ``skip`` set, each core step sees ``concat(G_0, G_m)`` where
    ``G_0`` is the encoder output, so the core's input dims are twice the
    latent dims.
    """

    encoder: GNConfig
    core: CoreSpec
    decoder: GNConfig
    output_focus: str = "mix"
    skip: bool = False

    def __post_init__(self):
        if self.output_focus not in OUTPUT_FOCI:
            raise CompositionError(f"output_focus must be one of {OUTPUT_FOCI}")
        enc_out = self.encoder.out_dims
        core_in = self.core.configs[0].in_dims
        expect = tuple(2 * d for d in enc_out) if self.skip else enc_out
        if core_in != expect:
            raise CompositionError(f"core expects {core_in}, encoder gives {expect}")
        core_out = self.core.configs[-1].out_dims
        if (self.skip or self.core.shared) and self.core.M > 1 and core_out != enc_out:
            raise CompositionError("a repeated core must return latent dims")
        if self.decoder.in_dims != core_out:
            raise CompositionError(f"decoder expects {self.decoder.in_dims}, core gives {core_out}")

    def init(self, params: ParameterStore, rng: np.random.Generator) -> None:
        init_block(self.encoder, params, "encoder", rng)
        self.core.init(params, "core", rng)
        init_block(self.decoder, params, "decoder", rng)

    def to_json(self) -> dict:
        return {"encoder": self.encoder.to_json(),
                "core": {"config": [c.to_json() for c in self.core.configs] if not self.core.shared
                         else self.core.configs[0].to_json(), "M": self.core.M, "shared": self.core.shared},
                "decoder": self.decoder.to_json(), "output_focus": self.output_focus, "skip": self.skip}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "EPDSpec":
        core = d["core"]
        raw = core["config"]
        configs = [config_from_json(c) for c in raw] if isinstance(raw, list) else [config_from_json(raw)]
        return cls(config_from_json(d["encoder"]), CoreSpec(configs, int(core["M"]), bool(core["shared"])),
                   config_from_json(d["decoder"]), d.get("output_focus", "mix"), bool(d.get("skip", False)))


def encode_process_decode(g_inp, spec: EPDSpec, params: ParameterStore, return_all: bool = False):
    """``GN_dec(GN_core^M(GN_enc(G_inp)))``.

    ``return_all`` returns the decoded graph after every core step (the last
    entry is the final output).
    """
    tensor_in = isinstance(g_inp, TensorGraph)
    tg = g_inp if tensor_in else TensorGraph.from_graph(g_inp)
    latent0 = apply_block(tg, spec.encoder, params, "encoder")
    latent = latent0
    decoded = []
    for m, p in enumerate(spec.core.step_prefixes("core")):
        cfg = spec.core.configs[0] if spec.core.shared else spec.core.configs[m]
        core_in = concat_tensor_graphs(latent0, latent) if spec.skip else latent
        latent = apply_block(core_in, cfg, params, p)
        if return_all or m == spec.core.M - 1:
            decoded.append(apply_block(latent, spec.decoder, params, "decoder"))
    if not tensor_in:
        from .graph import BatchedGraph
        conv = (lambda t: t.to_batched()) if isinstance(g_inp, BatchedGraph) else (lambda t: t.to_graph())
        decoded = [conv(t) for t in decoded]
    return decoded if return_all else decoded[-1]


@dataclass
class RecurrentSpec:
    """Recurrent GN: ``G_core = core(concat(enc(G_inp), G_hid))``, output ``dec(G_core)``.

    The next hidden graph keeps the leading ``hidden_dims`` columns of each
    core output attribute; with ``hidden_dims`` equal to the core output
    dims it is the whole core output, and with zeros every step is a
    stateless encode-process-decode.
    """

    encoder: GNConfig
    core: CoreSpec
    decoder: GNConfig
    hidden_dims: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)
        enc = self.encoder.out_dims
        merged = tuple(a + b for a, b in zip(enc, self.hidden_dims))
        if self.core.configs[0].in_dims != merged:
            raise CompositionError(f"core expects {self.core.configs[0].in_dims}, merge gives {merged}")
        core_out = self.core.configs[-1].out_dims
        if any(h > c for h, c in zip(self.hidden_dims, core_out)):
            raise CompositionError(f"hidden dims {self.hidden_dims} exceed core output dims {core_out}")
        if self.decoder.in_dims != core_out:
            raise CompositionError(f"decoder expects {self.decoder.in_dims}, core gives {core_out}")

    def init(self, params: ParameterStore, rng: np.random.Generator) -> None:
        init_block(self.encoder, params, "encoder", rng)
        self.core.init(params, "core", rng)
        init_block(self.decoder, params, "decoder", rng)


def initial_hidden(g: Graph, dims: tuple[int, int, int]) -> Graph:
    """Zero hidden graph with the structure of ``g``."""
    de, dv, du = dims
    return g.replace(globals=np.zeros(du), nodes=np.zeros((g.n_node, dv)), edges=np.zeros((g.n_edge, de)))


def _leading_columns(g, dims: tuple[int, int, int]):
    de, dv, du = dims
    if isinstance(g, TensorGraph):
        from . import autodiff as ad
        return g.replace(edges=ad.column_slice(g.edges, 0, de), nodes=ad.column_slice(g.nodes, 0, dv),
                         globals=ad.column_slice(g.globals, 0, du))
    return g.replace(edges=g.edges[:, :de], nodes=g.nodes[:, :dv], globals=g.globals[:du])


def recurrent_step(g_inp, g_hid, spec: RecurrentSpec, params: ParameterStore):
    """One step; returns ``(G_out, G_hid_next)``.  The decoder reads the post-core graph."""
    enc = apply_block(g_inp, spec.encoder, params, "encoder")
    if isinstance(enc, TensorGraph):
        merged = concat_tensor_graphs(enc, g_hid)
    else:
        merged = concat_attributes(enc, g_hid)
    core_out = run_core(merged, spec.core, params, "core")
    return apply_block(core_out, spec.decoder, params, "decoder"), _leading_columns(core_out, spec.hidden_dims)


def skip_connect(g_m, g_next):
    """Attribute-wise concatenation of a block's input and output graphs."""
    if isinstance(g_m, TensorGraph):
        return concat_tensor_graphs(g_m, g_next)
    return concat_attributes(g_m, g_next)
