"""
Error Types
Exception hierarchy shared by every engine module, the loader and the runner.
"""

from typing import Optional


class OuLabError(Exception):
    """Base class for all errors raised by the toolkit"""


class FlowOverflow(OuLabError, ValueError):
    """Matrix exponential requested with ‖tB‖ above the configured cap"""


class QuadratureFailure(OuLabError, RuntimeError):
    """Adaptive quadrature exceeded its refinement depth"""


class RankMismatch(OuLabError, RuntimeError):
    """Kernel-chain and Kalman-block ranks disagree"""


class DerivOrderUnavailable(OuLabError, ValueError):
    """A symbol family cannot supply the requested time-derivative order"""


class EllipticityFailure(OuLabError, RuntimeError):
    """The symbol degenerates on the unit sphere at some t < T"""


class GridMismatch(OuLabError, ValueError):
    """Two fields (or a field and a problem) live on different grids"""


class NonMonotoneScenario(OuLabError, RuntimeError):
    """Threshold bisection found inconsistent brackets"""


class CgStall(OuLabError, RuntimeError):
    """Conjugate gradient residual stopped decreasing"""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan"),
                 iterate=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.iterate = iterate


class IndefiniteForm(OuLabError, RuntimeError):
    """Negative curvature met inside conjugate gradient"""


class PartitionOverflow(OuLabError, ValueError):
    """Partition enumeration requested beyond the supported order"""


class ConfigError(OuLabError, ValueError):
    """Scenario or settings file failed validation"""

    def __init__(self, field: str, message: str, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}: {message}{location}")


class ScenarioError(OuLabError, RuntimeError):
    """Downstream failure wrapped with the scenario and stage it happened in"""

    def __init__(self, scenario: str, stage: str, cause: Exception):
        self.scenario = scenario
        self.stage = stage
        self.cause = cause
        super().__init__(f"scenario '{scenario}' failed during {stage}: "
                         f"{type(cause).__name__}: {cause}")


class TruncationWarning(UserWarning):
    """Periodic box or frequency truncation is not damped enough"""
