"""Reinforcement-learning estimators of the feedback capacity."""

from .config import RlConfig
from .ddpg import critic_target_expected, ddpg_train, successor_beliefs
from .pou import (TrainingDiverged, TrainingResult, UnrollResult, actor_policy, initial_actor,
                  pou_train, pou_unroll)
from .replay import ClusteredReplayBuffer, Transition, replay_insert, replay_sample

__all__ = [
    "ClusteredReplayBuffer", "RlConfig", "TrainingDiverged", "TrainingResult", "Transition",
    "UnrollResult", "actor_policy", "critic_target_expected", "ddpg_train", "initial_actor",
    "pou_train", "pou_unroll", "replay_insert", "replay_sample", "successor_beliefs",
]
