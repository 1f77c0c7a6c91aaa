"""Trajectory following with a future-conditioned inverse dynamics model.

Modules:

- ``core``: positions, actions, trajectories, the action codec and JSONL I/O
- ``envsim``: the 2D point-mass environment, scenarios and scripted experts
- ``futuresel``: Static / Closest / Radius / Inner-Outer future selection
- ``idm``: the MLP inverse dynamics model, training and gradient checking
- ``metrics``: DTW, coverage rate, AUC and the future-index ratio
- ``harness``: closed-loop rollouts, multi-seed evaluation, sweeps, ablations
- ``cli``: the ``idmk`` command
"""

from .core import Action, InvalidInputError, Position, Trajectory, TrajectoryStep
from .envsim import SCENARIOS, EnvConfig, EnvState, StochasticitySpec, make_reference, run_expert
from .futuresel import Closest, InnerOuter, Radius, Static
from .harness import IdmPolicy, ReplayPolicy, RolloutConfig, evaluate, run_rollout
from .idm import TrainConfig, WindowSpec, train
from .metrics import auc, dtw_distance, future_index_ratio

__version__ = "0.1.0"

__all__ = [
    "Action", "InvalidInputError", "Position", "Trajectory", "TrajectoryStep",
    "SCENARIOS", "EnvConfig", "EnvState", "StochasticitySpec", "make_reference", "run_expert",
    "Closest", "InnerOuter", "Radius", "Static",
    "IdmPolicy", "ReplayPolicy", "RolloutConfig", "evaluate", "run_rollout",
    "TrainConfig", "WindowSpec", "train",
    "auc", "dtw_distance", "future_index_ratio",
]
