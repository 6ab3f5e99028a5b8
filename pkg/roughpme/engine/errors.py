"""
Exception hierarchy shared by all lab subsystems
"""

from typing import Optional


class RoughPMEError(Exception):
    """Base class for all lab errors"""


class DomainError(RoughPMEError):
    """Invalid interval, mesh, or a geometric query without a unique answer"""


class PathError(RoughPMEError):
    """Driving path misuse: bad mesh, horizon, dimension or file"""


class CoefficientError(RoughPMEError):
    """Noise coefficient construction failure"""


class FlowError(RoughPMEError):
    """Characteristic flow produced a non-finite state"""

    def __init__(self, message: str, time: Optional[float] = None):
        if time is not None:
            message = f"{message} (t={time:.6g})"
        super().__init__(message)
        self.time = time


class StepAlignmentError(FlowError):
    """Strict step alignment requested but dt does not divide a path segment"""


class BallViolationError(RoughPMEError):
    """Driving paths lie outside the configured rough-path ball"""


class SolverError(RoughPMEError):
    """PDE solver failure"""


class InnerSolveError(SolverError):
    """Implicit diffusion solve did not converge"""


class CFLViolationError(SolverError):
    """Explicit transport step would break the CFL guard"""


class KineticError(RoughPMEError):
    """Kinetic diagnostics failure"""


class XiRangeError(KineticError):
    """Solution left the velocity grid range"""


class SupportViolationError(KineticError):
    """Transported test function reached the boundary cells"""


class EmptyTallyError(KineticError):
    """Defect tally has no recorded steps"""


class ScenarioError(RoughPMEError):
    """Experiment scenario failure"""


class LadderError(ScenarioError):
    """Approximation ladder is not nested or not monotone in its parameter"""


class ConfigError(ScenarioError):
    """Experiment configuration could not be read or validated"""
