"""Reference tasks: shortest path, sorting, mass-spring physics."""

from .physics import PhysicsState, physics_step, rollout
from .shortest_path import ShortestPathSample, gen_shortest_path
from .sorting import SortSample, gen_sort
from .training import TASKS, TrainConfig, default_architecture, evaluate, train

__all__ = ["PhysicsState", "physics_step", "rollout", "ShortestPathSample", "gen_shortest_path",
           "SortSample", "gen_sort", "TASKS", "TrainConfig", "default_architecture", "evaluate", "train"]
