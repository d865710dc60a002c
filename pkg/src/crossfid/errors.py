"""Shared exception and warning types."""


class RoutingError(ValueError):
    """A two-qubit gate touches a pair outside the device coupling map.

    Routing (SWAP insertion) is deliberately unsupported; circuits must be
    generated against the target coupling map.
    """


class ResourceLimitError(RuntimeError):
    """A requested computation exceeds the supported desk-scale limits."""


class NumericError(ArithmeticError):
    """A quantity is numerically degenerate (e.g. vanishing purity)."""


class UnreliableEstimateWarning(UserWarning):
    """A statistical estimator produced a value outside its trusted regime.

    The value is still returned; callers decide whether to keep it.
    """
