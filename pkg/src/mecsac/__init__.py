"""Joint computing, pushing and caching in a single-user MEC network, learned with SAC."""

from .env import (
    CacheState,
    ConfigError,
    CostBreakdown,
    InvalidActionError,
    MecEnv,
    SystemAction,
    SystemConfig,
    SystemState,
    TaskSpec,
)
from .requests import TransitionMatrix, build_chain, limiting_distribution

__version__ = "0.1.0"
