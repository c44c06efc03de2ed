class LqlrException(Exception):
    """Base class for every failure raised by the toolkit.

    The command line maps it to exit code 1, the simulation harness counts it
    against the replicate's cell.
    """

    pass


class DomainException(LqlrException, ValueError):
    """An argument lies outside the domain of the operation.

    Raised for L_q of a non-positive value, q outside (0, 1], contamination
    fractions outside [0, 1) and malformed hypothesis or experiment specs.
    """

    pass


class EstimationException(LqlrException):
    """The MLqE could not be computed.

    Carries the Lq-likelihood trace and the last iterate so that callers can
    inspect how far the solver got.
    """

    def __init__(
        self,
        message: str,
        trace: list[float] | None = None,
        theta: list[float] | None = None,
    ):
        super().__init__(message)
        self.trace = trace or []
        self.theta = theta or []


class ConvergenceException(EstimationException):
    """The reweighting iteration hit max_iter."""

    pass


class ScaleCollapseException(EstimationException):
    """All observations coincide, a scale family has no finite maximizer."""

    pass


class SingularMatrixException(LqlrException):
    """B (or a block of it) is singular or numerically so."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class BootstrapException(LqlrException):
    """Too many bootstrap resamples had to be redrawn."""

    pass


class SelectionException(LqlrException):
    """Every grid point of the q selection failed."""

    pass


class TestFailureException(LqlrException):
    """A competitor test is undefined on the data (zero variance, all ties at mu0)."""

    __test__ = False


class AsymmetryException(LqlrException):
    """The symmetric-case identities were requested for an asymmetric contamination."""

    pass


class InputException(LqlrException):
    """Command line input could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
