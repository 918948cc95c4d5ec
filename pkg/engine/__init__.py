"""
Engine package: numerical core of the OU control lab
"""

__version__ = "0.1.0"

from .errors import (
    CgStall,
    ConfigError,
    DerivOrderUnavailable,
    EllipticityFailure,
    FlowOverflow,
    GridMismatch,
    IndefiniteForm,
    NonMonotoneScenario,
    OuLabError,
    PartitionOverflow,
    QuadratureFailure,
    RankMismatch,
    ScenarioError,
    TruncationWarning,
)
from .settings import get_threads, load_settings, set_threads

__all__ = [
    '__version__',
    'CgStall',
    'ConfigError',
    'DerivOrderUnavailable',
    'EllipticityFailure',
    'FlowOverflow',
    'GridMismatch',
    'IndefiniteForm',
    'NonMonotoneScenario',
    'OuLabError',
    'PartitionOverflow',
    'QuadratureFailure',
    'RankMismatch',
    'ScenarioError',
    'TruncationWarning',
    'get_threads',
    'load_settings',
    'set_threads'
]
