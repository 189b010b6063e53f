"""Graph networks: graph-to-graph blocks, composition, and reference tasks."""

from .graph import (BatchedGraph, Graph, batch, concat_attributes, deserialize, permute, serialize,
                    unbatch, validate)
from .blocks import GNConfig, PhiSignature, TensorGraph, apply_block, init_block
from .nn import ParameterStore
from .variants import PRESETS, VARIANT_NAMES, make_variant

__all__ = [
    "BatchedGraph", "Graph", "batch", "concat_attributes", "deserialize", "permute", "serialize",
    "unbatch", "validate", "GNConfig", "PhiSignature", "TensorGraph", "apply_block", "init_block",
    "ParameterStore", "PRESETS", "VARIANT_NAMES", "make_variant",
]
