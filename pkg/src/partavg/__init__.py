"""Local SGD with partial model averaging: simulator, matrix oracle and bound evaluators."""

from .config import SimConfig, load_config, parse_config
from .engine import RunResult, run
from .param_space import (
    PartitionScheme,
    active_partition,
    make_contiguous_partition,
    make_strided_partition,
)

__version__ = "0.1.0"

__all__ = [
    "PartitionScheme",
    "RunResult",
    "SimConfig",
    "active_partition",
    "load_config",
    "make_contiguous_partition",
    "make_strided_partition",
    "parse_config",
    "run",
]
