"""Navigation networks: a learned POMDP model, a differentiable Bayes filter and
a QMDP planner trained end to end by imitation on gridworld mazes."""

from .errors import (
    ConfigError,
    ExpertFailed,
    FormatError,
    GenerationError,
    InfeasibleError,
    NavNetError,
    ShapeError,
    TrainingDiverged,
)
from .gridworld import Maze, Pose, Variant, generate_maze
from .model import ModelConfig, NavNetParams, init_params
from .training import StageConfig, TrainConfig, train_curriculum

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ExpertFailed",
    "FormatError",
    "GenerationError",
    "InfeasibleError",
    "Maze",
    "ModelConfig",
    "NavNetError",
    "NavNetParams",
    "Pose",
    "ShapeError",
    "StageConfig",
    "TrainConfig",
    "TrainingDiverged",
    "Variant",
    "generate_maze",
    "init_params",
    "train_curriculum",
]
