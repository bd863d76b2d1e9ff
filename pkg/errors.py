"""
MCVR ERRORS
Exception hierarchy shared by every module. The CLI maps these onto exit codes.
"""


class McvrError(Exception):
    """Base class for everything this toolkit raises on purpose"""

    exit_code = 1


class ConfigError(McvrError, ValueError):
    """Bad experiment configuration, unknown task name, empty grid"""

    exit_code = 2


class NumericalError(McvrError, ValueError):
    """A computation could not produce a valid number"""

    exit_code = 3


class DegenerateProposal(NumericalError):
    pass


class SupportViolation(NumericalError):
    """Proposal density vanishes where the base density does not"""


class DimensionMismatch(NumericalError):
    pass


class UnreachableIsoVariance(NumericalError):
    pass


class ZeroMarginal(NumericalError):
    pass


class ZeroNormGradient(NumericalError):
    pass


class ConstantInput(NumericalError):
    pass


class SinkhornDidNotConverge(NumericalError):
    """Carries the marginal residual and the last (unconverged) pair matrix"""

    def __init__(self, residual: float, matrix=None, iterations: int = 0):
        self.residual = float(residual)
        self.matrix = matrix
        self.iterations = iterations
        super().__init__(
            f"Sinkhorn did not converge after {iterations} iterations "
            f"(marginal residual {self.residual:.3e})"
        )
