class PseudotoricError(Exception):
    """Base class for every numerical failure raised by the services"""


class ZeroVector(PseudotoricError):
    pass


class NoConvergence(PseudotoricError):
    pass


class DomainMismatch(PseudotoricError):
    pass


class StepCollapse(PseudotoricError):
    """Adaptive step fell below the configured floor, usually at a zero of the field"""


class OnBaseSet(PseudotoricError):
    pass


class SingularFiberPoint(PseudotoricError):
    pass


class DegeneratePair(PseudotoricError):
    pass


class LevelOutOfRange(PseudotoricError):
    pass


class NoSolution(PseudotoricError):
    """Requested integral values lie outside the attained range"""

    def __init__(self, message: str, attained=None):
        super().__init__(message)
        self.attained = attained


class InsufficientSamples(PseudotoricError):
    pass


class OnDivisor(PseudotoricError):
    pass


class DegenerateChart(PseudotoricError):
    pass


class EnteredCollar(PseudotoricError):
    pass


class DegenerateDistribution(PseudotoricError):
    pass


class UnbalancedIntegrals(PseudotoricError):
    pass
