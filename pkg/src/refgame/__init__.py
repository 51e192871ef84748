"""Multi-modal, multi-step referential game: agents, training, and analysis."""

__version__ = "0.1.0"

from .agents import ReceiverAgent, ReceiverConfig, SenderAgent, SenderConfig
from .game import (GameConfig, GameInstance, EpisodeTrace, play_episode,
                   sample_instance, score)
from .params import ParamStore, ParamTensor
from .tape import Tape, Var

__all__ = [
    "__version__",
    "EpisodeTrace", "GameConfig", "GameInstance",
    "ParamStore", "ParamTensor",
    "ReceiverAgent", "ReceiverConfig", "SenderAgent", "SenderConfig",
    "Tape", "Var",
    "play_episode", "sample_instance", "score",
]
