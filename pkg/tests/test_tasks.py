import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphnets.tasks import physics, shortest_path, sorting
from graphnets.tasks.physics import PhysicsState, physics_step, rollout
from graphnets.tasks.training import (TASKS, LabelOracle, TrainConfig, default_architecture, evaluate,
                                      init_params, label_metrics, make_model, train, validation_loss)


# -- shortest path ------------------------------------------------------------

def undirected(pairs, lengths=None):
    lengths = lengths or [1.0] * len(pairs)
    s = [a for a, b in pairs] + [b for a, b in pairs]
    r = [b for a, b in pairs] + [a for a, b in pairs]
    return np.array(s), np.array(r), np.array(lengths + lengths)


def on_path_edges(sample):
    return {(int(s), int(r)) for s, r, y in zip(sample.graph.senders, sample.graph.receivers, sample.edge_labels)
            if y == 1}


def test_path_graph_query():
    s, r, w = undirected([(0, 1), (1, 2), (2, 3)])
    sample = shortest_path.make_sample(4, s, r, w, 0, 3)
    assert sample.node_labels.tolist() == [1, 1, 1, 1]
    assert on_path_edges(sample) == {(0, 1), (1, 2), (2, 3), (1, 0), (2, 1), (3, 2)}


def test_degenerate_query():
    s, r, w = undirected([(0, 1), (1, 2)])
    sample = shortest_path.make_sample(3, s, r, w, 1, 1)
    assert sample.node_labels.tolist() == [0, 1, 0]
    assert sample.edge_labels.sum() == 0


def test_triangle_prefers_direct_edge():
    s, r, w = undirected([(0, 1), (1, 2), (0, 2)])
    sample = shortest_path.make_sample(3, s, r, w, 0, 2)
    assert sample.path == [0, 2]
    assert sample.node_labels.tolist() == [1, 0, 1]


def test_tie_breaks_to_lowest_index():
    # square 0-1-3 and 0-2-3 with equal lengths
    s, r, w = undirected([(0, 1), (1, 3), (0, 2), (2, 3)])
    assert shortest_path.shortest_path(4, s, r, w, 0, 3) == [0, 1, 3]


def bellman_ford(n, senders, receivers, lengths, source):
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    for _ in range(n - 1):
        for a, b, w in zip(senders, receivers, lengths):
            if dist[a] + w < dist[b]:
                dist[b] = dist[a] + w
    return dist


def all_simple_path_lengths(n, senders, receivers, lengths, source, target):
    weight = {(int(a), int(b)): float(w) for a, b, w in zip(senders, receivers, lengths)}
    best = np.inf
    others = [v for v in range(n) if v not in (source, target)]
    for k in range(len(others) + 1):
        for mid in itertools.permutations(others, k):
            nodes = (source, *mid, target)
            steps = list(zip(nodes[:-1], nodes[1:]))
            if all(p in weight for p in steps):
                best = min(best, sum(weight[p] for p in steps))
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_labels_are_shortest(seed, n):
    sample = shortest_path.gen_shortest_path(n, np.random.default_rng(seed))
    g = sample.graph
    lengths = g.edges[:, 0]
    path = sample.path
    assert path[0] == sample.source and path[-1] == sample.target
    weight = {(int(a), int(b)): w for a, b, w in zip(g.senders, g.receivers, lengths)}
    total = sum(weight[p] for p in zip(path[:-1], path[1:]))
    dist = bellman_ford(n, g.senders, g.receivers, lengths, sample.source)
    assert total == pytest.approx(dist[sample.target], rel=1e-12, abs=1e-15)
    if sample.source != sample.target:
        best = all_simple_path_lengths(n, g.senders, g.receivers, lengths, sample.source, sample.target)
        assert total == pytest.approx(best, rel=1e-12)
    assert sample.node_labels[sample.source] == 1 and sample.node_labels[sample.target] == 1
    assert sample.node_labels.sum() == len(path)
    assert sample.edge_labels.sum() == 2 * (len(path) - 1)


def test_generated_graph_is_connected_and_deterministic():
    a = shortest_path.gen_shortest_path(9, np.random.default_rng(3))
    b = shortest_path.gen_shortest_path(9, np.random.default_rng(3))
    assert a.graph == b.graph and a.path == b.path
    assert shortest_path._connected(9, a.graph.senders, a.graph.receivers)


def test_shortest_path_json_roundtrip():
    a = shortest_path.gen_shortest_path(6, np.random.default_rng(1))
    b = shortest_path.ShortestPathSample.from_json(a.to_json())
    assert b.graph == a.graph and np.array_equal(b.edge_labels, a.edge_labels) and b.path == a.path


def test_shortest_path_needs_two_nodes():
    with pytest.raises(ValueError):
        shortest_path.gen_shortest_path(1, np.random.default_rng(0))


# -- sorting --------------------------------------------------------------

def successor_edges(sample):
    g = sample.graph
    return {(int(s), int(r)) for s, r, y in zip(g.senders, g.receivers, sample.edge_labels) if y == 1}


def test_sort_example():
    sample = sorting.make_sample([3.0, 1.0, 2.0])
    assert sample.node_labels.tolist() == [0, 1, 0]
    # value 1 (node 1) -> value 2 (node 2) -> value 3 (node 0)
    assert successor_edges(sample) == {(1, 2), (2, 0)}


def test_sort_single_element():
    sample = sorting.make_sample([0.4])
    assert sample.node_labels.tolist() == [1] and sample.graph.n_edge == 0


def test_sort_already_sorted():
    sample = sorting.make_sample([0.1, 0.2, 0.3, 0.4])
    assert successor_edges(sample) == {(0, 1), (1, 2), (2, 3)}


def test_sort_rejects_duplicates():
    with pytest.raises(ValueError):
        sorting.make_sample([1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_sort_labels_form_chain(seed, n):
    sample = sorting.gen_sort(n, np.random.default_rng(seed))
    assert sample.node_labels.sum() == 1
    nxt = dict(successor_edges(sample))
    node = int(np.argmax(sample.node_labels))
    visited = [node]
    while node in nxt:
        node = nxt[node]
        visited.append(node)
    assert len(visited) == n
    assert list(sample.values[visited]) == sorted(sample.values)


# -- physics --------------------------------------------------------------

def state(pos, vel, springs=(), rest=(), k=(), gravity=(0.0, 0.0), dt=0.02, fixed=None, mass=None):
    n = len(pos)
    return PhysicsState(pos, vel, np.ones(n) if mass is None else mass,
                        np.zeros(n, bool) if fixed is None else fixed,
                        np.array(springs, dtype=int).reshape(-1, 2), rest, k, gravity, dt)


def test_free_fall_step():
    s = physics_step(state([[0.0, 0.0]], [[0.0, 0.0]], gravity=(0.0, -10.0), dt=0.1))
    assert s.vel.tolist() == [[0.0, -1.0]]
    assert s.pos.tolist() == [[0.0, -0.1]]


def test_spring_at_rest_length():
    s0 = state([[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]], [(0, 1)], [1.0], [50.0])
    assert physics_step(s0) == s0


def test_two_mass_momentum_exact():
    s0 = state([[0.0, 0.0], [1.7, 0.3]], [[0.0, 0.0], [0.0, 0.0]], [(0, 1)], [1.0], [50.0])
    s1 = physics_step(s0)
    assert np.array_equal(physics.momentum(s1), physics.momentum(s0))
    assert not np.array_equal(s1.vel, s0.vel)


def test_spring_force_pairs_cancel():
    rng = np.random.default_rng(0)
    s = physics.gen_system(6, rng, gravity=(0.0, 0.0), fix_ends=False, extra_springs=3)
    f = physics.spring_forces(s)
    # the second endpoint receives exactly -f, so each pair sums to zero
    assert np.array_equal(f + (-f), np.zeros_like(f))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_momentum_conserved_exactly(seed, n):
    rng = np.random.default_rng(seed)
    s = physics.gen_system(n, rng, gravity=(0.0, 0.0), fix_ends=False, extra_springs=3)
    p0 = physics.momentum(s)
    for _ in range(50):
        s = physics_step(s)
        assert np.array_equal(physics.momentum(s), p0)


def test_velocity_grid_error_is_tiny():
    s = physics.gen_system(5, np.random.default_rng(1))
    exact = s.vel + s.dt * physics.acceleration(s)
    free = ~s.fixed
    assert np.max(np.abs(physics_step(s).vel[free] - exact[free])) <= 2 * physics.VELOCITY_QUANTUM


def test_fixed_masses_do_not_move():
    rng = np.random.default_rng(2)
    s = physics.gen_system(5, rng)
    s1 = physics_step(s)
    assert np.array_equal(s1.pos[s.fixed], s.pos[s.fixed])


def test_coincident_endpoints_give_zero_force():
    s = state([[1.0, 1.0], [1.0, 1.0]], [[0.0, 0.0]] * 2, [(0, 1)], [1.0], [50.0])
    assert np.array_equal(physics.spring_forces(s), np.zeros((1, 2)))


def test_energy_drift_small():
    s = physics.gen_system(4, np.random.default_rng(3), dt=1e-3, gravity=(0.0, 0.0), fix_ends=False)
    e0 = physics.total_energy(s)
    for _ in range(1000):
        s = physics_step(s)
    assert abs(physics.total_energy(s) - e0) / abs(e0) < 0.01


def test_state_validation():
    with pytest.raises(ValueError):
        state([[0.0, 0.0]], [[0.0, 0.0]], mass=np.array([0.0]))
    with pytest.raises(ValueError):
        state([[0.0, 0.0]], [[0.0, 0.0]], springs=[(0, 3)], rest=[1.0], k=[1.0])


def test_state_graph_roundtrip():
    s = physics.gen_system(4, np.random.default_rng(4))
    assert physics.graph_to_state(physics.state_to_graph(s)) == s


def test_model_input_is_translation_invariant():
    s = physics.gen_system(4, np.random.default_rng(5))
    moved = s.replace(pos=s.pos + np.array([3.0, -7.0]))
    a, b = physics.model_input(s), physics.model_input(moved)
    assert np.allclose(a.edges, b.edges, atol=1e-12) and np.array_equal(a.nodes, b.nodes)
    assert a.n_edge == 2 * len(s.springs)


def test_rollouts():
    s0 = physics.gen_system(4, np.random.default_rng(6))
    assert rollout(lambda s: s, s0, 5).states == [s0] * 6
    assert rollout(physics_step, s0, 0).states == [s0]
    traj = rollout(physics_step, s0, 10).states
    expected = s0
    for t in range(10):
        expected = physics_step(expected)
    assert traj[-1] == expected


def test_rollout_truncates_on_nan():
    s0 = physics.gen_system(3, np.random.default_rng(7))
    calls = []

    def bad(s):
        calls.append(1)
        return s.replace(pos=s.pos * np.nan) if len(calls) == 3 else s

    r = rollout(bad, s0, 10)
    assert len(r.states) == 3 and "step 3" in r.error


def test_generator_determinism():
    for task in TASKS.values():
        a = task.sample_batch(np.random.default_rng(9), 3)
        b = task.sample_batch(np.random.default_rng(9), 3)
        assert [task.to_json(x) for x in a] == [task.to_json(x) for x in b]


# -- training and evaluation ------------------------------------------------

def test_zero_steps_returns_initial_params():
    spec = default_architecture("sort", M=1)
    res = train("sort", spec, TrainConfig(steps=0, seed=3))
    init = init_params(spec, 3)
    assert all(np.array_equal(res.params[n].data, init[n].data) for n in init)


def test_training_reduces_validation_loss():
    spec = default_architecture("sort")
    cfg = TrainConfig(steps=60, batch_size=8, lr=3e-3, seed=0, eval_every=0)
    val = TASKS["sort"].sample_batch(np.random.default_rng(42), 16)
    before = validation_loss("sort", spec, init_params(spec, 0), val)
    res = train("sort", spec, cfg)
    assert validation_loss("sort", spec, res.params, val) < before


def test_training_is_deterministic():
    spec = default_architecture("physics")
    cfg = TrainConfig(steps=5, batch_size=4, seed=1, eval_every=0)
    a, b = train("physics", spec, cfg), train("physics", spec, cfg)
    assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)


def test_resume_matches_uninterrupted():
    spec = default_architecture("shortest_path", M=2)
    full = train("shortest_path", spec, TrainConfig(steps=6, batch_size=3, seed=2, eval_every=0))
    half = train("shortest_path", spec, TrainConfig(steps=3, batch_size=3, seed=2, eval_every=0))
    rest = train("shortest_path", spec, TrainConfig(steps=6, batch_size=3, seed=2, eval_every=0),
                 params=half.params, opt_state=half.opt_state, start_step=3)
    assert all(np.array_equal(full.params[n].data, rest.params[n].data) for n in full.params)


def test_oracle_metrics_are_perfect():
    for task in ("shortest_path", "sort"):
        samples = TASKS[task].sample_batch(np.random.default_rng(0), 5)
        m = evaluate(task, LabelOracle(), samples)
        assert m == {"node_acc": 1.0, "edge_acc": 1.0, "graph_solved": 1.0}
    pairs = TASKS["physics"].sample_batch(np.random.default_rng(0), 3)
    assert evaluate("physics", make_model("physics", None, None, oracle=True), pairs)["rmse"] == 0.0


def test_all_zero_predictor_accuracy():
    samples = TASKS["sort"].sample_batch(np.random.default_rng(1), 6)
    preds = [(np.zeros_like(s.node_labels), np.zeros_like(s.edge_labels)) for s in samples]
    m = label_metrics(preds, samples)
    edges = np.concatenate([s.edge_labels for s in samples])
    nodes = np.concatenate([s.node_labels for s in samples])
    assert m["edge_acc"] == pytest.approx(1 - edges.mean(), abs=1e-15)
    assert m["node_acc"] == pytest.approx(1 - nodes.mean(), abs=1e-15)
    assert m["graph_solved"] == 0.0


def test_physics_sample_json_roundtrip():
    task = TASKS["physics"]
    pair = task.sample_batch(np.random.default_rng(2), 1)[0]
    back = task.from_json(task.to_json(pair))
    assert back[0] == pair[0] and back[1] == pair[1]
