"""Model-based PGPE with LSCDE or GP transition models."""

from .env import EnvConfig, TransitionSet, Trajectory, make_env
from .policy import LinearPolicy, GaussianPolicy, PriorHyper
from .trainer import TrainConfig, train, train_mpgpe, train_iwpgpe, evaluate_policy, schedule_sweep

__version__ = "0.1.0"
