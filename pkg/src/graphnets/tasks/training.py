"""Task registry, models, losses, training loop and evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, Tensor
from ..blocks import TensorGraph
from ..composer import CoreSpec, EPDSpec, encode_process_decode
from ..graph import batch
from ..nn import OptimizerConfig, OptimizerState, ParameterStore, optimizer_step
from ..variants import make_variant
from . import physics, shortest_path, sorting

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, step: int, params: ParameterStore, opt_state: OptimizerState):
        super().__init__(message)
        self.step = step
        self.params = params
        self.opt_state = opt_state


# -- architectures ---------------------------------------------------------

def default_architecture(task: str, latent: int = 16, hidden: Sequence[int] = (16, 16), M: int | None = None) -> EPDSpec:
    """Encode-process-decode with an independent encoder/decoder and a full GN core."""
    t = TASKS[task]
    hidden = list(hidden)
    enc = make_variant("independent", t.input_dims, {"latent": latent, "hidden": hidden})
    lat = enc.out_dims
    core_in = tuple(2 * d for d in lat) if t.skip else lat
    core = make_variant("full_gn", core_in, {"latent": latent, "hidden": hidden})
    M = t.default_M if M is None else M
    dec = make_variant("independent", lat, {"hidden": hidden, **t.decoder_outputs})
    return EPDSpec(enc, CoreSpec([core], M, shared=True), dec, t.output_focus, skip=t.skip)


def init_params(spec: EPDSpec, seed: int) -> ParameterStore:
    params = ParameterStore()
    spec.init(params, np.random.default_rng([seed, 7919]))
    return params


# -- tasks -----------------------------------------------------------------

@dataclass
class Task:
    name: str
    input_dims: tuple[int, int, int]
    decoder_outputs: dict[str, Any]
    output_focus: str
    default_M: int
    skip: bool
    sizes: tuple[int, int]
    generate: Callable[[int, np.random.Generator], Any]
    to_json: Callable[[Any], dict]
    from_json: Callable[[dict], Any]

    def sample_batch(self, rng: np.random.Generator, count: int, sizes: tuple[int, int] | None = None) -> list:
        lo, hi = sizes or self.sizes
        return [self.generate(int(rng.integers(lo, hi + 1)), rng) for _ in range(count)]


def _physics_json(pair) -> dict:
    from ..graph import graph_to_dict
    s, nxt = pair
    return {"input": graph_to_dict(physics.state_to_graph(s)), "target": graph_to_dict(physics.state_to_graph(nxt))}


def _physics_from_json(d: dict):
    from ..graph import graph_from_dict
    return (physics.graph_to_state(graph_from_dict(d["input"], 6, 2)),
            physics.graph_to_state(graph_from_dict(d["target"], 6, 2)))


TASKS: dict[str, Task] = {
    "shortest_path": Task(
        "shortest_path", (shortest_path.EDGE_FEATURES, shortest_path.NODE_FEATURES, 0),
        {"edge_out": 1, "node_out": 1, "global_out": None}, "mix", 10, True, (6, 10),
        lambda n, rng: shortest_path.gen_shortest_path(n, rng), lambda s: s.to_json(),
        shortest_path.ShortestPathSample.from_json),
    "sort": Task(
        "sort", (sorting.EDGE_FEATURES, sorting.NODE_FEATURES, 0),
        {"edge_out": 1, "node_out": 1, "global_out": None}, "mix", 3, True, (2, 8),
        sorting.gen_sort, lambda s: s.to_json(), sorting.SortSample.from_json),
    "physics": Task(
        "physics", (physics.MODEL_EDGE_FEATURES, physics.MODEL_NODE_FEATURES, physics.MODEL_GLOBAL_FEATURES),
        {"edge_out": None, "node_out": 2, "global_out": None}, "nodes", 1, False, (4, 4),
        lambda n, rng: physics.gen_physics(n, rng), _physics_json, _physics_from_json),
}


def is_label_task(task: str) -> bool:
    return task in ("shortest_path", "sort")


# -- forward passes and losses ---------------------------------------------

def _label_inputs(samples) -> TensorGraph:
    return TensorGraph.from_graph(batch([s.graph for s in samples]))


def label_logits(spec: EPDSpec, params: ParameterStore, samples, all_steps: bool = False):
    """Per-step ``(node_logits, edge_logits)`` tensors for a batch of samples."""
    outs = encode_process_decode(_label_inputs(samples), spec, params, return_all=True)
    pairs = [(o.nodes, o.edges) for o in outs]
    return pairs if all_steps else pairs[-1]


def label_loss(spec: EPDSpec, params: ParameterStore, samples) -> Tensor:
    """Sigmoid cross-entropy on node and edge labels, averaged over processing steps."""
    node_y = np.concatenate([s.node_labels for s in samples])[:, None]
    edge_y = np.concatenate([s.edge_labels for s in samples])[:, None]
    terms = []
    for nodes, edges in label_logits(spec, params, samples, all_steps=True):
        terms.append(ad.add(ad.sigmoid_cross_entropy(nodes, node_y), ad.sigmoid_cross_entropy(edges, edge_y)))
    return ad.scale(ad.add_scalars(terms), 1.0 / len(terms))


def physics_accel(spec: EPDSpec, params: ParameterStore, states: Sequence[physics.PhysicsState]) -> Tensor:
    tg = TensorGraph.from_graph(batch([physics.model_input(s) for s in states]))
    return ad.scale(encode_process_decode(tg, spec, params).nodes, physics.ACCEL_SCALE)


def physics_loss(spec: EPDSpec, params: ParameterStore, pairs) -> Tensor:
    """Squared error of the next-step position and velocity over free masses.

    Errors are expressed in acceleration units (velocity error / dt,
    position error / dt^2) so both terms share one scale.
    """
    states = [p[0] for p in pairs]
    acc = physics_accel(spec, params, states)
    dt = np.concatenate([np.full(s.n_masses, s.dt) for s in states])[:, None]
    vel = np.concatenate([s.vel for s in states])
    pos = np.concatenate([s.pos for s in states])
    free = np.concatenate([~s.fixed for s in states]).astype(np.float64)[:, None]
    nxt_v = np.concatenate([p[1].vel for p in pairs])
    nxt_x = np.concatenate([p[1].pos for p in pairs])
    # v' = v + dt a ; x' = x + dt v'
    free_t = Tensor(np.repeat(free, 2, axis=1))
    v_pred = ad.add(Tensor(vel), ad.mul(Tensor(np.repeat(dt, 2, axis=1)), acc))
    x_pred = ad.add(Tensor(pos), ad.mul(Tensor(np.repeat(dt, 2, axis=1)), v_pred))
    v_err = ad.mul(free_t, ad.sub(v_pred, Tensor(nxt_v)))
    x_err = ad.mul(free_t, ad.sub(x_pred, Tensor(nxt_x)))
    scale_v = 1.0 / (np.repeat(dt, 2, axis=1) * physics.ACCEL_SCALE)
    v_term = ad.mean(ad.square(ad.mul(v_err, Tensor(scale_v))))
    x_term = ad.mean(ad.square(ad.mul(x_err, Tensor(scale_v / np.repeat(dt, 2, axis=1)))))
    return ad.add(v_term, x_term)


def task_loss(task: str, spec: EPDSpec, params: ParameterStore, samples) -> Tensor:
    if is_label_task(task):
        return label_loss(spec, params, samples)
    return physics_loss(spec, params, samples)


# -- models used for evaluation and rollouts --------------------------------

class LabelModel:
    """Thresholded predictions from a trained EPD."""

    def __init__(self, spec: EPDSpec, params: ParameterStore):
        self.spec, self.params = spec, params

    def predict(self, samples) -> list[tuple[np.ndarray, np.ndarray]]:
        nodes, edges = label_logits(self.spec, self.params, samples)
        out, no, eo = [], 0, 0
        for s in samples:
            nv, ne = s.graph.n_node, s.graph.n_edge
            out.append(((nodes.data[no:no + nv, 0] > 0).astype(float), (edges.data[eo:eo + ne, 0] > 0).astype(float)))
            no, eo = no + nv, eo + ne
        return out


class LabelOracle:
    def predict(self, samples):
        return [(s.node_labels.copy(), s.edge_labels.copy()) for s in samples]


class PhysicsModel:
    """Learned one-step simulator: predicted acceleration, exact integrator."""

    def __init__(self, spec: EPDSpec, params: ParameterStore):
        self.spec, self.params = spec, params

    def __call__(self, s: physics.PhysicsState) -> physics.PhysicsState:
        acc = physics_accel(self.spec, self.params, [s]).data
        return physics.integrate(s, acc)


def physics_oracle(s: physics.PhysicsState) -> physics.PhysicsState:
    return physics.physics_step(s)


def make_model(task: str, spec: EPDSpec | None, params: ParameterStore | None, oracle: bool = False):
    if is_label_task(task):
        return LabelOracle() if oracle else LabelModel(spec, params)
    return physics_oracle if oracle else PhysicsModel(spec, params)


# -- metrics ---------------------------------------------------------------

def label_metrics(predictions, samples) -> dict[str, float]:
    node_hits = node_total = edge_hits = edge_total = solved = 0
    for (pn, pe), s in zip(predictions, samples):
        n_ok = pn == s.node_labels
        e_ok = pe == s.edge_labels
        node_hits += int(n_ok.sum())
        edge_hits += int(e_ok.sum())
        node_total += len(n_ok)
        edge_total += len(e_ok)
        solved += int(n_ok.all() and e_ok.all())
    return {"node_acc": node_hits / max(node_total, 1), "edge_acc": edge_hits / max(edge_total, 1),
            "graph_solved": solved / max(len(samples), 1)}


def physics_metrics(model, pairs, horizon: int = 1) -> dict[str, float]:
    """Position RMSE after ``horizon`` fed-back steps, plus the true mean displacement."""
    sq, count, disp = 0.0, 0, 0.0
    for s0, _ in pairs:
        pred = physics.rollout(model, s0, horizon)
        true = physics.rollout(physics_oracle, s0, horizon)
        if pred.error:
            return {"rmse": float("nan"), "mean_displacement": float("nan"), "horizon": horizon}
        d = pred.states[-1].pos - true.states[-1].pos
        sq += float(np.sum(d * d))
        count += d.shape[0]
        disp += float(np.sum(np.linalg.norm(true.states[-1].pos - s0.pos, axis=1)))
    return {"rmse": float(np.sqrt(sq / max(count, 1))), "mean_displacement": disp / max(count, 1),
            "horizon": horizon}


def evaluate(task: str, model, samples, horizon: int = 1) -> dict[str, float]:
    if is_label_task(task):
        return label_metrics(model.predict(samples), samples)
    return physics_metrics(model, samples, horizon)


# -- training --------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 3e-3
    optimizer: str = "adam"
    seed: int = 0
    sizes: tuple[int, int] | None = None
    eval_every: int = 100
    val_size: int = 32
    lr_decay_to: float | None = None


@dataclass
class TrainResult:
    params: ParameterStore
    opt_state: OptimizerState
    history: list[dict[str, float]] = field(default_factory=list)


def batch_rng(seed: int, step: int) -> np.random.Generator:
    """Per-step generator so a resumed run draws the same batches."""
    return np.random.default_rng([seed, 1, step])


def validation_set(task: str, seed: int, count: int, sizes: tuple[int, int] | None = None) -> list:
    return TASKS[task].sample_batch(np.random.default_rng([seed, 2]), count, sizes)


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay_to is None or cfg.steps <= 1:
        return cfg.lr
    frac = step / (cfg.steps - 1)
    return cfg.lr * (cfg.lr_decay_to / cfg.lr) ** frac


def train(task: str, spec: EPDSpec, cfg: TrainConfig, params: ParameterStore | None = None,
          opt_state: OptimizerState | None = None, start_step: int = 0, fixed_samples: list | None = None,
          callback: Callable[[dict], None] | None = None,
          step_callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Minimize the task loss; deterministic in ``cfg.seed``.

    ``fixed_samples`` replaces the generator with a fixed training set
    (cycled in order).  Resuming passes the saved params, optimizer state
    and ``start_step``.
    """
    t = TASKS[task]
    params = params if params is not None else init_params(spec, cfg.seed)
    opt_state = opt_state or OptimizerState()
    history: list[dict[str, float]] = []
    val = fixed_samples if fixed_samples is not None else validation_set(task, cfg.seed, cfg.val_size, cfg.sizes)
    for step in range(start_step, cfg.steps):
        if fixed_samples is not None:
            k = cfg.batch_size
            samples = [fixed_samples[(step * k + i) % len(fixed_samples)] for i in range(k)]
        else:
            samples = t.sample_batch(batch_rng(cfg.seed, step), cfg.batch_size, cfg.sizes)
        params.zero_grad()
        with Tape() as tape:
            loss = task_loss(task, spec, params, samples)
        value = float(loss.data)
        if not np.isfinite(value):
            tape.clear()
            raise DivergenceError(f"non-finite loss at step {step}", step, params, opt_state)
        ad.backward(tape, loss)
        grads = params.collect_grads()
        opt = OptimizerConfig(cfg.optimizer, _lr_at(cfg, step))
        optimizer_step(params, grads, opt, opt_state)
        if step_callback:
            step_callback(step + 1, value)
        if cfg.eval_every and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            row = {"step": step + 1, "loss": value}
            row.update(evaluate(task, make_model(task, spec, params), val))
            history.append(row)
            log.info("step %d loss %.5f %s", step + 1, value, row)
            if callback:
                callback(row)
    return TrainResult(params, opt_state, history)


def validation_loss(task: str, spec: EPDSpec, params: ParameterStore, samples) -> float:
    return float(task_loss(task, spec, params, samples).data)
