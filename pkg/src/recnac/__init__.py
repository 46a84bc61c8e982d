"""Recurrent natural actor-critic for partially observable MDPs."""

__version__ = "0.1.0"

from .indrnn import NetParams, ProjectionRadii, forward, init_symmetric, project_max_norm
from .pomdp import History, Pomdp, Trajectory, random_pomdp, sample_trajectory

__all__ = [
    "History", "NetParams", "Pomdp", "ProjectionRadii", "Trajectory", "forward",
    "init_symmetric", "project_max_norm", "random_pomdp", "sample_trajectory",
]
