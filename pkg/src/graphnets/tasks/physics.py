"""2-D mass-spring systems: simulator, state/graph encoding, and rollouts.

Units: positions in m, velocities in m/s, masses in kg, stiffness in N/m,
gravity in m/s^2, timestep in s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..graph import Graph

DEFAULT_MASS = 1.0
DEFAULT_STIFFNESS = 50.0
DEFAULT_REST_LENGTH = 1.0
DEFAULT_GRAVITY = (0.0, -10.0)
DEFAULT_DT = 0.02

# Simulator velocities live on a fixed-point grid so that spring impulses
# cancel exactly and total momentum is conserved bit-for-bit.  Exact for
# |v| < 2**22 m/s.
VELOCITY_QUANTUM = 2.0 ** -30

# state graph layout
STATE_NODE_FIELDS = ("x", "y", "vx", "vy", "mass", "fixed")
STATE_EDGE_FIELDS = ("rest_length", "stiffness")
STATE_GLOBAL_FIELDS = ("gx", "gy", "dt")


@dataclass(frozen=True, eq=False)
class PhysicsState:
    pos: np.ndarray          # (N, 2)
    vel: np.ndarray          # (N, 2)
    mass: np.ndarray         # (N,)
    fixed: np.ndarray        # (N,) bool
    springs: np.ndarray      # (S, 2) mass indices
    rest_length: np.ndarray  # (S,)
    stiffness: np.ndarray    # (S,)
    gravity: np.ndarray = np.array(DEFAULT_GRAVITY)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "vel", np.asarray(self.vel, dtype=np.float64).reshape(-1, 2))
        object.__setattr__(self, "mass", np.asarray(self.mass, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "fixed", np.asarray(self.fixed, dtype=bool).reshape(-1))
        object.__setattr__(self, "springs", np.asarray(self.springs, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "rest_length", np.asarray(self.rest_length, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "stiffness", np.asarray(self.stiffness, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=np.float64).reshape(2))
        n = len(self.pos)
        if np.any(self.mass <= 0):
            raise ValueError("masses must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.springs) and (self.springs.min() < 0 or self.springs.max() >= n):
            raise ValueError("spring references a missing mass")
        if not (len(self.vel) == len(self.mass) == len(self.fixed) == n):
            raise ValueError("per-mass arrays disagree in length")

    @property
    def n_masses(self) -> int:
        return len(self.pos)

    def replace(self, **changes) -> "PhysicsState":
        return replace(self, **changes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PhysicsState):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("pos", "vel", "mass", "fixed", "springs", "rest_length", "stiffness", "gravity")
                   ) and self.dt == other.dt

    __hash__ = None  # type: ignore[assignment]


def spring_forces(s: PhysicsState) -> np.ndarray:
    """Hooke force on the first endpoint of each spring, ``(S, 2)``.

    The second endpoint receives the exact negation.  Coincident endpoints
    produce zero force.
    """
    i, j = s.springs[:, 0], s.springs[:, 1]
    d = s.pos[i] - s.pos[j]
    length = np.sqrt(np.sum(d * d, axis=1))
    safe = np.where(length > 0, length, 1.0)
    direction = np.where(length[:, None] > 0, d / safe[:, None], 0.0)
    return -(s.stiffness * (length - s.rest_length))[:, None] * direction


def net_forces(s: PhysicsState) -> np.ndarray:
    f = spring_forces(s)
    total = np.zeros_like(s.pos)
    np.add.at(total, s.springs[:, 0], f)
    np.add.at(total, s.springs[:, 1], -f)
    return total


def acceleration(s: PhysicsState) -> np.ndarray:
    return net_forces(s) / s.mass[:, None] + s.gravity


def quantize(v: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(v, dtype=np.float64) / VELOCITY_QUANTUM) * VELOCITY_QUANTUM


def velocity_change(s: PhysicsState) -> np.ndarray:
    """``dt a`` per mass, built from grid-valued spring impulses.

    Each spring's impulse ``J = dt f`` is rounded to the velocity grid and
    applied as ``+J`` and ``-J``; sums of grid values are exact, so the
    pairs cancel exactly.  Division by mass is exact for unit (or
    power-of-two) masses.
    """
    impulse = quantize(s.dt * spring_forces(s))
    total = np.zeros_like(s.pos)
    np.add.at(total, s.springs[:, 0], impulse)
    np.add.at(total, s.springs[:, 1], -impulse)
    return quantize(total / s.mass[:, None]) + quantize(s.dt * s.gravity)


def physics_step(s: PhysicsState) -> PhysicsState:
    """Semi-implicit Euler: ``v' = v + dt a``, ``x' = x + dt v'``; fixed masses stay put."""
    vel = s.vel + velocity_change(s)
    pos = s.pos + s.dt * vel
    vel = np.where(s.fixed[:, None], s.vel, vel)
    pos = np.where(s.fixed[:, None], s.pos, pos)
    return s.replace(pos=pos, vel=vel)


def kinetic_energy(s: PhysicsState) -> float:
    return float(0.5 * np.sum(s.mass * np.sum(s.vel ** 2, axis=1)))


def spring_energy(s: PhysicsState) -> float:
    i, j = s.springs[:, 0], s.springs[:, 1]
    length = np.linalg.norm(s.pos[i] - s.pos[j], axis=1)
    return float(0.5 * np.sum(s.stiffness * (length - s.rest_length) ** 2))


def total_energy(s: PhysicsState) -> float:
    grav = -float(np.sum(s.mass[:, None] * s.pos * s.gravity))
    return kinetic_energy(s) + spring_energy(s) + grav


def momentum(s: PhysicsState) -> np.ndarray:
    """Total momentum, summed with a correctly rounded sum."""
    p = s.mass[:, None] * s.vel
    return np.array([math.fsum(p[:, 0]), math.fsum(p[:, 1])])


# -- generation ------------------------------------------------------------

def gen_system(n_masses: int, rng: np.random.Generator, dt: float = DEFAULT_DT,
               gravity=DEFAULT_GRAVITY, fix_ends: bool = True, extra_springs: int = 1) -> PhysicsState:
    """A perturbed chain of masses, optionally with a few extra springs and pinned ends."""
    if n_masses < 2:
        raise ValueError("need at least 2 masses")
    x = np.cumsum(np.concatenate([[0.0], rng.uniform(0.7, 1.3, size=n_masses - 1)]))
    pos = np.stack([x, rng.normal(scale=0.2, size=n_masses)], axis=1)
    vel = quantize(rng.normal(scale=0.5, size=(n_masses, 2)))
    springs = [(i, i + 1) for i in range(n_masses - 1)]
    for _ in range(extra_springs if n_masses > 2 else 0):
        i, j = sorted(int(v) for v in rng.choice(n_masses, size=2, replace=False))
        if (i, j) not in springs:
            springs.append((i, j))
    springs_arr = np.array(springs, dtype=np.int64)
    rest = np.linalg.norm(pos[springs_arr[:, 0]] - pos[springs_arr[:, 1]], axis=1) * rng.uniform(
        0.8, 1.2, size=len(springs))
    fixed = np.zeros(n_masses, dtype=bool)
    if fix_ends:
        fixed[[0, -1]] = True
        vel[fixed] = 0.0
    return PhysicsState(pos, vel, np.full(n_masses, DEFAULT_MASS), fixed, springs_arr, rest,
                        np.full(len(springs), DEFAULT_STIFFNESS), np.array(gravity, dtype=np.float64), dt)


def gen_physics(n_masses: int, rng: np.random.Generator, max_warmup: int = 50, **kw) -> tuple[PhysicsState, PhysicsState]:
    """A state drawn from a short simulated trajectory, plus its successor."""
    s = gen_system(n_masses, rng, **kw)
    for _ in range(int(rng.integers(0, max_warmup + 1))):
        s = physics_step(s)
    return s, physics_step(s)


# -- state <-> graph -------------------------------------------------------

def state_to_graph(s: PhysicsState) -> Graph:
    """Lossless graph encoding: one edge per spring (first endpoint as sender)."""
    nodes = np.column_stack([s.pos, s.vel, s.mass, s.fixed.astype(np.float64)])
    edges = np.column_stack([s.rest_length, s.stiffness])
    return Graph(np.append(s.gravity, s.dt), nodes, edges, s.springs[:, 0], s.springs[:, 1])


def graph_to_state(g: Graph) -> PhysicsState:
    n = g.nodes
    return PhysicsState(n[:, 0:2], n[:, 2:4], n[:, 4], n[:, 5] > 0.5,
                        np.stack([g.senders, g.receivers], axis=1), g.edges[:, 0], g.edges[:, 1],
                        g.globals[:2], float(g.globals[2]))


# model input features
MODEL_NODE_FEATURES = 3   # vx, vy, fixed
MODEL_EDGE_FEATURES = 5   # dx, dy, |d|, rest length, stiffness / DEFAULT_STIFFNESS
MODEL_GLOBAL_FEATURES = 2  # gravity
ACCEL_SCALE = 10.0


def model_input(s: PhysicsState) -> Graph:
    """Translation-invariant features; each spring becomes two directed edges."""
    i, j = s.springs[:, 0], s.springs[:, 1]
    senders = np.concatenate([i, j])
    receivers = np.concatenate([j, i])
    d = s.pos[senders] - s.pos[receivers]
    length = np.linalg.norm(d, axis=1, keepdims=True)
    rest = np.concatenate([s.rest_length, s.rest_length])[:, None]
    k = np.concatenate([s.stiffness, s.stiffness])[:, None] / DEFAULT_STIFFNESS
    nodes = np.column_stack([s.vel, s.fixed.astype(np.float64)])
    return Graph(s.gravity / ACCEL_SCALE, nodes, np.hstack([d, length, rest, k]), senders, receivers)


def integrate(s: PhysicsState, acc: np.ndarray) -> PhysicsState:
    """Advance ``s`` with a given acceleration using the simulator's integrator."""
    vel = s.vel + s.dt * acc
    pos = s.pos + s.dt * vel
    vel = np.where(s.fixed[:, None], s.vel, vel)
    pos = np.where(s.fixed[:, None], s.pos, pos)
    return s.replace(pos=pos, vel=vel)


# -- rollouts --------------------------------------------------------------

@dataclass
class Rollout:
    states: list[PhysicsState]
    error: str | None = None


def rollout(model: Callable[[PhysicsState], PhysicsState], s0: PhysicsState, T: int) -> Rollout:
    """Feed ``T`` predictions back in; stops early if a state goes non-finite."""
    states = [s0]
    s = s0
    for t in range(T):
        s = model(s)
        if not (np.all(np.isfinite(s.pos)) and np.all(np.isfinite(s.vel))):
            return Rollout(states, f"non-finite state at step {t + 1}")
        states.append(s)
    return Rollout(states)
