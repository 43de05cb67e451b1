"""Feedback capacity of unifilar finite-state channels, with the Ising channel
as the worked case: belief-MDP rewards, duality bounds, RL estimators, and
zero-error coding schemes."""

from .channel import InvalidArgument, UnifilarChannel, ising_channel, load_channel

__version__ = "0.1.0"
__all__ = ["InvalidArgument", "UnifilarChannel", "ising_channel", "load_channel"]
