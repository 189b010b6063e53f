"""Acceptance criteria 1-9, each at its stated tolerance and time budget.

Every test prints a single ``CRITERION n: PASS|FAIL`` line (visible with
``pytest -s`` or in ``-v`` output via the terminal reporter).
"""

import time

import numpy as np
import pytest

from graphnets import autodiff as ad
from graphnets.autodiff import Tensor
from graphnets.blocks import apply_block, counters, init_block
from graphnets.composer import CoreSpec, run_core
from graphnets.graph import Graph, batch, fully_connected, permute, unbatch
from graphnets.nn import ParameterStore, finite_difference_grads, loss_and_grads, max_relative_error
from graphnets.tasks import physics, shortest_path
from graphnets.tasks.training import (TASKS, TrainConfig, default_architecture, evaluate, make_model, train,
                                      validation_set)
from graphnets.variants import VARIANT_NAMES, make_variant

import oracles
from helpers import path_graph, random_graph

DIMS = (3, 2, 4)
HP = {"hidden": [5], "latent": 4, "key_dim": 3, "heads": 2, "n_edge_types": 3}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    return emit


def build(name, dims=DIMS, hp=HP, seed=0):
    cfg = make_variant(name, dims, hp)
    params = ParameterStore()
    init_block(cfg, params, "gn", np.random.default_rng(seed))
    return cfg, params


def test_1_permutation_equivariance(report):
    start = time.perf_counter()
    blocks = {name: build(name) for name in VARIANT_NAMES}
    rng = np.random.default_rng(1)
    failures = 0
    for _ in range(200):
        g = random_graph(rng, dims=DIMS, max_nodes=12, max_edges=40, n_types=3)
        p, q = rng.permutation(g.n_node), rng.permutation(g.n_edge)
        gp = permute(g, p, q)
        for cfg, params in blocks.values():
            a = apply_block(gp, cfg, params)
            b = permute(apply_block(g, cfg, params), p, q)
            failures += not (a == b and np.array_equal(a.globals, b.globals))
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    report(1, ok, f"{failures} mismatches over 200 graphs x {len(blocks)} presets, {elapsed:.1f}s")
    assert failures == 0
    assert elapsed < 30


def test_2_batching_equivalence(report):
    start = time.perf_counter()
    blocks = [build(name) for name in VARIANT_NAMES]
    rng = np.random.default_rng(2)
    failures = 0
    for _ in range(100):
        pair = [random_graph(rng, dims=DIMS, max_nodes=12, max_edges=40, n_types=3) for _ in range(2)]
        for cfg, params in blocks:
            merged = unbatch(apply_block(batch(pair), cfg, params))
            failures += merged != [apply_block(g, cfg, params) for g in pair]
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 10
    report(2, ok, f"{failures} mismatches over 100 pairs x {len(blocks)} presets, {elapsed:.1f}s")
    assert failures == 0
    assert elapsed < 10


def _block_loss(g, cfg, params, probes):
    out = apply_block(g, cfg, params)
    terms = [ad.total(ad.mul(t, Tensor(probes[k]))) for k, t in
             (("e", out.edges), ("v", out.nodes), ("u", out.globals)) if t.data.size]
    return ad.add_scalars(terms)


def test_3_gradient_correctness(report):
    from graphnets.blocks import TensorGraph
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    for name in VARIANT_NAMES:
        cfg, params = build(name, seed=int(rng.integers(1000)))
        g = random_graph(rng, n_node=5, n_edge=10, dims=DIMS, n_types=3)
        for p in params:
            # nonzero biases so no unit sits exactly on a ReLU kink
            params[p].data = params[p].data + rng.uniform(-0.1, 0.1, size=params[p].shape)
        tg = TensorGraph.from_graph(g)
        out = apply_block(tg, cfg, params)
        probes = {"e": rng.normal(size=out.edges.shape), "v": rng.normal(size=out.nodes.shape),
                  "u": rng.normal(size=out.globals.shape)}
        loss = lambda: _block_loss(tg, cfg, params, probes)  # noqa: E731
        _, analytic = loss_and_grads(params, loss)
        worst[name] = max_relative_error(analytic, finite_difference_grads(params, loss))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-3 and elapsed < 120
    report(3, ok, f"max rel err {worst[top]:.2e} ({top}), {elapsed:.1f}s")
    assert max(worst.values()) < 1e-3, worst
    assert elapsed < 120


def test_4_m_hop_locality(report):
    start = time.perf_counter()
    cfg = make_variant("interaction_network", (4, 4, 0), {"hidden": [8], "latent": 4})
    params = ParameterStore()
    init_block(cfg, params, "core", np.random.default_rng(4))
    g = path_graph(8, node_dim=4, edge_dim=4)
    nodes = g.nodes.copy()
    nodes[0] += 1.0
    h = g.replace(nodes=nodes)
    bad = []
    for M in (1, 2, 3):
        core = CoreSpec([cfg], M, shared=True)
        a, b = run_core(g, core, params), run_core(h, core, params)
        bad += [(M, i) for i in range(M + 1, 8) if not np.array_equal(a.nodes[i], b.nodes[i])]
        # the perturbation does reach distance M
        assert not np.array_equal(a.nodes[M], b.nodes[M])
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 10
    report(4, ok, f"{len(bad)} far nodes changed, {elapsed:.2f}s")
    assert not bad
    assert elapsed < 10


def test_5_variant_reduction_oracles(report):
    start = time.perf_counter()
    g = Graph.from_lists([0.3, -0.2, 0.5, 1.0],
                         [[0.5, -1.0], [1.5, 0.25], [-0.75, 2.0]],
                         [([0.1, 0.2, 0.3], 0, 1), ([-0.4, 0.5, 0.6], 1, 2), ([0.7, -0.8, 0.9], 2, 0),
                          ([1.0, 1.1, -1.2], 1, 0), ([0.2, 0.0, -0.3], 2, 1)])
    errors = {}
    cfg, params = build("deep_set", seed=5)
    out = apply_block(g, cfg, params)
    v, u = oracles.deep_set(g, params)
    errors["deep_set"] = max(np.max(np.abs(out.nodes - v)), np.max(np.abs(out.globals - u)))
    cfg, params = build("relation_network", seed=6)
    out = apply_block(g, cfg, params)
    e, u = oracles.relation_network(g, params)
    errors["relation_network"] = max(np.max(np.abs(out.edges - e)), np.max(np.abs(out.globals - u)))
    cfg, params = build("commnet", seed=7)
    out = apply_block(g, cfg, params)
    e, v = oracles.commnet(g, params)
    errors["commnet"] = max(np.max(np.abs(out.edges - e)), np.max(np.abs(out.nodes - v)))
    cfg, params = build("struct2vec", seed=8)
    out = apply_block(g, cfg, params)
    e, v = oracles.struct2vec(g, params)
    errors["struct2vec"] = max(np.max(np.abs(out.edges - e)), np.max(np.abs(out.nodes - v)))
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) <= 1e-12 and elapsed < 5
    report(5, ok, ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f", {elapsed:.2f}s")
    assert max(errors.values()) <= 1e-12, errors
    assert elapsed < 5


def test_6_physics_conservation(report):
    start = time.perf_counter()
    s = physics.gen_system(4, np.random.default_rng(6), dt=1e-3, gravity=(0.0, 0.0), fix_ends=False)
    e0 = physics.total_energy(s)
    p0 = physics.momentum(s)
    momentum_exact = True
    for _ in range(1000):
        s = physics.physics_step(s)
        momentum_exact &= bool(np.array_equal(physics.momentum(s), p0))
    drift = abs(physics.total_energy(s) - e0) / abs(e0)
    elapsed = time.perf_counter() - start
    ok = drift < 0.01 and momentum_exact and elapsed < 5
    report(6, ok, f"energy drift {drift:.2e}, momentum exact={momentum_exact}, {elapsed:.2f}s")
    assert drift < 0.01
    assert momentum_exact
    assert elapsed < 5


# -- learnability (shared with the size-transfer check) ---------------------

SORT_STEPS = 1500
PHYSICS_STEPS = 1500
PATH_STEPS = 800


@pytest.fixture(scope="module")
def trained():
    """Train the three demo models once; returns models plus timing."""
    start = time.perf_counter()
    out = {}

    rng = np.random.default_rng(70)
    sample = next(s for s in (shortest_path.gen_shortest_path(6, rng, radius=0.45) for _ in range(1000))
                  if len(s.path) >= 4)
    spec = default_architecture("shortest_path")
    res = train("shortest_path", spec, TrainConfig(steps=PATH_STEPS, batch_size=1, lr=3e-3, lr_decay_to=3e-4,
                                                        seed=0, eval_every=0),
                fixed_samples=[sample])
    out["shortest_path"] = (spec, res.params, sample)

    spec = default_architecture("sort")
    res = train("sort", spec, TrainConfig(steps=SORT_STEPS, batch_size=16, lr=3e-3, lr_decay_to=3e-4, seed=0,
                                          eval_every=0))
    out["sort"] = (spec, res.params)

    spec = default_architecture("physics")
    res = train("physics", spec, TrainConfig(steps=PHYSICS_STEPS, batch_size=16, lr=3e-3, lr_decay_to=3e-4,
                                             seed=0, eval_every=0))
    out["physics"] = (spec, res.params)
    out["train_seconds"] = time.perf_counter() - start
    return out


def test_7_learnability(trained, report):
    start = time.perf_counter()
    spec, params, sample = trained["shortest_path"]
    path_m = evaluate("shortest_path", make_model("shortest_path", spec, params), [sample])

    spec, params = trained["sort"]
    held_out = validation_set("sort", seed=1234, count=200, sizes=(2, 8))
    sort_m = evaluate("sort", make_model("sort", spec, params), held_out)

    spec, params = trained["physics"]
    pairs = TASKS["physics"].sample_batch(np.random.default_rng(4321), 100, (4, 4))
    phys_m = evaluate("physics", make_model("physics", spec, params), pairs, horizon=1)
    ratio = phys_m["rmse"] / phys_m["mean_displacement"]

    elapsed = trained["train_seconds"] + time.perf_counter() - start
    a = path_m["node_acc"] == 1.0 and path_m["edge_acc"] == 1.0
    b = sort_m["edge_acc"] >= 0.95
    c = ratio < 0.05
    ok = a and b and c and elapsed < 900
    report(7, ok, f"(a) path node/edge acc {path_m['node_acc']:.3f}/{path_m['edge_acc']:.3f} after {PATH_STEPS} "
                  f"steps; (b) sort edge acc {sort_m['edge_acc']:.4f}; (c) physics rmse/displacement "
                  f"{ratio:.4f}; {elapsed:.0f}s")
    assert a, path_m
    assert b, sort_m
    assert c, phys_m
    assert elapsed < 900


def test_8_size_transfer(trained, report):
    results = {}
    spec, params, _ = trained["shortest_path"]
    data = TASKS["shortest_path"].sample_batch(np.random.default_rng(80), 20, (12, 12))
    results["shortest_path"] = evaluate("shortest_path", make_model("shortest_path", spec, params), data)
    spec, params = trained["sort"]
    data = TASKS["sort"].sample_batch(np.random.default_rng(81), 50, (16, 16))
    results["sort"] = evaluate("sort", make_model("sort", spec, params), data)
    spec, params = trained["physics"]
    data = TASKS["physics"].sample_batch(np.random.default_rng(82), 20, (8, 8))
    results["physics"] = evaluate("physics", make_model("physics", spec, params), data)
    ok = all(all(np.isfinite(v) for v in m.values()) for m in results.values())
    summary = "; ".join(f"{task}: " + ", ".join(f"{k}={v:.4g}" for k, v in m.items()) for task, m in results.items())
    report(8, ok, summary)
    assert ok


def test_9_sample_count(report):
    s, r = fully_connected(4)
    g = Graph(np.zeros(1), np.ones((4, 6)), np.ones((12, 2)), s, r)
    cfg, params = build("full_gn", dims=(2, 6, 1))
    before = counters["edge_updates"]
    apply_block(g, cfg, params)
    count = counters["edge_updates"] - before
    report(9, count == 12, f"{count} edge-update applications")
    assert count == 12
