"""Streaming change-point detection with truncated online DMD with control."""
from .engine import CpdConfig, CpdDmd, CpdScore, score_windows
from .errors import ConfigError, CpdError, DataError, NumericalError, StateError
from .evaluation import PROFILES, NabProfile, nab_score, sweep_threshold
from .online_dmd import ModeSet, OnlineDMD
from .online_svd import OnlineSVD
from .rank import suggest_rank
from .stream import HankelConfig, RawBatch, WindowLayout

__all__ = [
    "CpdConfig", "CpdDmd", "CpdScore", "score_windows",
    "CpdError", "ConfigError", "DataError", "StateError", "NumericalError",
    "NabProfile", "PROFILES", "nab_score", "sweep_threshold",
    "ModeSet", "OnlineDMD", "OnlineSVD", "suggest_rank",
    "HankelConfig", "RawBatch", "WindowLayout",
]

__version__ = "0.1.0"
