"""Synchronous controller/learner protocol with straggler injection."""

from .buffer import ReplayBuffer, collect_episodes
from .events import EventQueue
from .sim import NeverDecodable, RoundOutcome, SimTransport, earliest_decodable_time
from .straggler import ComputeCostModel, StragglerModel
from .training import (
    RoundTrace,
    TrainingConfig,
    TrainingResult,
    run_iteration,
    run_training,
    smooth,
)

__all__ = [
    "ComputeCostModel",
    "EventQueue",
    "NeverDecodable",
    "ReplayBuffer",
    "RoundOutcome",
    "RoundTrace",
    "SimTransport",
    "StragglerModel",
    "TrainingConfig",
    "TrainingResult",
    "collect_episodes",
    "earliest_decodable_time",
    "run_iteration",
    "run_training",
    "smooth",
]
