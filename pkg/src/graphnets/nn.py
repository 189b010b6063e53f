"""Parameter storage, MLP/GRU update functions, optimizers and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor


class ParameterStore:
    """Named parameter tensors in insertion order, with gradient slots."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def size(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None
        self.grads = {n: np.zeros_like(t.data) for n, t in self._params.items()}

    def collect_grads(self) -> dict[str, np.ndarray]:
        """Move leaf gradients into ``self.grads`` (accumulating)."""
        for n, t in self._params.items():
            g = self.grads.get(n)
            if g is None:
                g = self.grads[n] = np.zeros_like(t.data)
            if t.grad is not None:
                g += t.grad
                t.grad = None
        return self.grads

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for n, t in self._params.items():
            out.add(n, t.data.copy())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self._params.items():
            value = np.asarray(state[n], dtype=np.float64)
            if value.shape != t.data.shape:
                raise ShapeError(f"parameter {n}: shape {value.shape} != {t.data.shape}")
            t.data = value.copy()


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


# -- MLP -------------------------------------------------------------------

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "identity": lambda x: x,
}


@dataclass
class MLPSpec:
    """``widths`` lists every layer output width, the last being the output dim."""

    in_dim: int
    widths: list[int]
    activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        if not self.widths:
            raise ValueError("MLP needs at least one layer")
        if self.in_dim < 0 or any(w <= 0 for w in self.widths):
            raise ValueError(f"bad MLP widths {self.in_dim} -> {self.widths}")
        for a in (self.activation, self.output_activation):
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def mlp_init(spec: MLPSpec, params: ParameterStore, prefix: str, rng: np.random.Generator) -> None:
    fan_in = spec.in_dim
    for i, width in enumerate(spec.widths):
        params.add(f"{prefix}/l{i}/w", glorot_uniform(rng, fan_in, width))
        params.add(f"{prefix}/l{i}/b", np.zeros(width))
        fan_in = width


def mlp_apply(spec: MLPSpec, params: ParameterStore, x: Tensor, prefix: str) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"{prefix}: expected input width {spec.in_dim}, got shape {x.shape}")
    h = x
    last = len(spec.widths) - 1
    for i in range(len(spec.widths)):
        h = ad.add_bias(ad.matmul(h, params[f"{prefix}/l{i}/w"]), params[f"{prefix}/l{i}/b"])
        h = _ACTIVATIONS[spec.output_activation if i == last else spec.activation](h)
    return h


# -- GRU -------------------------------------------------------------------

@dataclass
class GRUSpec:
    """Gated recurrent cell.

    With update gate ``z``, reset gate ``r`` and candidate ``n``::

        z  = sigmoid(x Wz + h Uz + bz)
        r  = sigmoid(x Wr + h Ur + br)
        n  = tanh(x Wn + (r * h) Un + bn)
        h' = (1 - z) * h + z * n

    so a saturated ``z = 1`` yields the candidate and ``z = 0`` keeps ``h``.
    """

    in_dim: int
    hidden_dim: int

    def __post_init__(self):
        if self.in_dim < 0 or self.hidden_dim <= 0:
            raise ValueError(f"bad GRU dims {self.in_dim}, {self.hidden_dim}")


def gru_init(spec: GRUSpec, params: ParameterStore, prefix: str, rng: np.random.Generator) -> None:
    for gate in ("z", "r", "n"):
        params.add(f"{prefix}/W{gate}", glorot_uniform(rng, spec.in_dim, spec.hidden_dim))
        params.add(f"{prefix}/U{gate}", glorot_uniform(rng, spec.hidden_dim, spec.hidden_dim))
        params.add(f"{prefix}/b{gate}", np.zeros(spec.hidden_dim))


def gru_apply(spec: GRUSpec, params: ParameterStore, x: Tensor, h: Tensor, prefix: str) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ShapeError(f"{prefix}: GRU input width {spec.in_dim}, got {x.shape}")
    if h.data.ndim != 2 or h.shape != (x.shape[0], spec.hidden_dim):
        raise ShapeError(f"{prefix}: GRU state shape {h.shape}")
    p = lambda name: params[f"{prefix}/{name}"]  # noqa: E731

    def affine(gate: str, hidden: Tensor) -> Tensor:
        return ad.add_bias(ad.add(ad.matmul(x, p(f"W{gate}")), ad.matmul(hidden, p(f"U{gate}"))), p(f"b{gate}"))

    z = ad.sigmoid(affine("z", h))
    r = ad.sigmoid(affine("r", h))
    n = ad.tanh(affine("n", ad.mul(r, h)))
    keep = ad.sub(Tensor(np.ones(z.shape)), z)
    return ad.add(ad.mul(keep, h), ad.mul(z, n))


# -- optimizers ------------------------------------------------------------

@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "m": {k: _encode_array(a) for k, a in self.m.items()},
            "v": {k: _encode_array(a) for k, a in self.v.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "OptimizerState":
        return cls(d["step"], {k: _decode_array(a) for k, a in d["m"].items()},
                   {k: _decode_array(a) for k, a in d["v"].items()})


def optimizer_step(params: ParameterStore, grads: dict[str, np.ndarray], config: OptimizerConfig,
                   state: OptimizerState | None = None) -> OptimizerState:
    """Apply one SGD or Adam update in place; returns the (updated) state."""
    state = state or OptimizerState()
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if config.kind == "sgd":
            p.data = p.data - config.lr * g
            continue
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - config.beta1 ** t)
        v_hat = v / (1 - config.beta2 ** t)
        p.data = p.data - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return state


# -- checkpoints -----------------------------------------------------------

def _encode_array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "values": [float(x) for x in a.reshape(-1)]}


def _decode_array(d: dict) -> np.ndarray:
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def params_to_json(params: ParameterStore) -> dict:
    return {name: _encode_array(t.data) for name, t in params.items()}


def params_from_json(d: dict) -> ParameterStore:
    store = ParameterStore()
    for name, entry in d.items():
        store.add(name, _decode_array(entry))
    return store


def save_params(params: ParameterStore, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params_to_json(params), separators=(",", ":")))


def load_params(path: str | Path) -> ParameterStore:
    return params_from_json(json.loads(Path(path).read_text()))


# -- gradient oracle -------------------------------------------------------

def loss_and_grads(params: ParameterStore, loss_fn: Callable[[], Tensor]) -> tuple[float, dict[str, np.ndarray]]:
    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    ad.backward(tape, loss)
    grads = params.collect_grads()
    return float(loss.data), {k: v.copy() for k, v in grads.items()}


def finite_difference_grads(params: ParameterStore, loss_fn: Callable[[], Tensor],
                            step: float = 1e-5, names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Central-difference estimate of d(loss)/d(param) for every coordinate."""
    out = {}
    for name in names or list(params):
        p = params[name]
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn().data)
            flat[i] = orig - step
            lo = float(loss_fn().data)
            flat[i] = orig
            g.reshape(-1)[i] = (hi - lo) / (2 * step)
        out[name] = g
    return out


def max_relative_error(a: dict[str, np.ndarray], b: dict[str, np.ndarray], floor: float = 1e-6) -> float:
    worst = 0.0
    for name in a:
        x, y = a[name], b[name]
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst
