"""Off-policy driving agents: TD3 and SAC with a shared replay buffer."""

from .buffer import Batch, ReplayBuffer, Transition
from .common import ACTION_HIGH, ACTION_LOW, agent_load, agent_save, polyak
from .sac import SACAgent, SACConfig, squashed_log_prob
from .td3 import TD3Agent, TD3Config, td3_target

__all__ = ["ACTION_HIGH", "ACTION_LOW", "Batch", "ReplayBuffer", "SACAgent", "SACConfig", "TD3Agent", "TD3Config",
           "Transition", "agent_load", "agent_save", "polyak", "squashed_log_prob", "td3_target"]
