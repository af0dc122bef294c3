"""Cooperative lane changing on a multi-lane highway with a from-scratch DQN."""

from .config import ScenarioConfig, load_config
from .dqn import QNetwork, ReplayBuffer, load_checkpoint, save_checkpoint
from .mdp import Action
from .training import evaluate, train
from .world import World, step

__all__ = ["Action", "QNetwork", "ReplayBuffer", "ScenarioConfig", "World", "evaluate",
           "load_checkpoint", "load_config", "save_checkpoint", "step", "train"]
