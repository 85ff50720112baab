"""
Exceptions raised by the peg-in-hole simulator and insertion controller
"""
from typing import Optional


class PegSimError(Exception):
    """Base class for every simulator, controller and harness error"""


class ConfigError(PegSimError):
    """Invalid configuration value (bad CLI flag, env override or target ratio)"""


# Geometry

class NonConvexError(PegSimError):
    """Cross-section vertices do not describe a strictly convex polygon"""


class DegenerateError(PegSimError):
    """Cross-section has fewer than three non-collinear points or zero extent"""


class NegativeClearanceError(PegSimError):
    """Requested dilation is negative; the peg cannot fit"""


class DeepPenetrationError(PegSimError):
    """Peg overlaps the environment by more than the contact query accepts"""


# Compliance

class SolverDivergedError(PegSimError):
    """Quasi-static solve left a penetration above tolerance"""

    def __init__(self, penetration: float, iterations: int):
        self.penetration = penetration
        self.iterations = iterations
        super().__init__(
            f"solver left {penetration * 1e3:.4f} mm penetration after {iterations} iterations"
        )


# Formations

class UnclassifiableError(PegSimError):
    """Contact pattern matches no contact formation"""


# Controller

class StepTimeoutError(PegSimError):
    """A controller step ran past its timeout"""

    def __init__(self, step, elapsed: float):
        self.step = step
        self.elapsed = elapsed
        super().__init__(f"step {getattr(step, 'name', step)} timed out after {elapsed:.1f}s")


class TiltUnreachableError(PegSimError):
    """Tilt correction could not bring the peg upright"""

    def __init__(self, tilt: float):
        self.tilt = tilt
        super().__init__(f"tilt stuck at {tilt:.4f} rad")


class JamDetectedError(PegSimError):
    """Insertion stalled with lateral force pinned at the grasp plateau"""


# Harness

class SceneParseError(PegSimError):
    """Scene or suite file is malformed"""


class AssumptionViolatedError(PegSimError):
    """Scene breaks one of the simulator's modeling assumptions"""

    def __init__(self, assumption: str, detail: Optional[str] = None):
        self.assumption = assumption
        message = f"assumption violated: {assumption}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)
