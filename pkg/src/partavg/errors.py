"""Exception hierarchy shared by the simulator modules."""


class PartavgError(Exception):
    """Base class for all library errors."""


class InvalidPartitionError(PartavgError, ValueError):
    pass


class InvalidObjectiveError(PartavgError, ValueError):
    pass


class InvalidSplitError(PartavgError, ValueError):
    pass


class InfeasibleSplitError(PartavgError, RuntimeError):
    """Dirichlet resampling could not give every worker enough samples."""


class ProtocolError(PartavgError, RuntimeError):
    """An averaging step was requested over an empty worker set."""


class NumericalError(PartavgError, FloatingPointError):
    """A non-finite value appeared during a run."""


class ConfigError(PartavgError, ValueError):
    """Configuration could not be parsed or validated.

    ``key`` names the offending ``section.key`` when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class BoundNotApplicable(PartavgError, ValueError):
    """The learning-rate condition of a convergence bound is violated."""


class VerificationError(PartavgError, AssertionError):
    pass
