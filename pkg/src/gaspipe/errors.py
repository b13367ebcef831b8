"""Exception hierarchy shared by all modules."""


class GasPipeError(Exception):
    """Base class for library errors."""


class InvalidArgument(GasPipeError, ValueError):
    pass


class SingularDerivative(GasPipeError, ArithmeticError):
    """Derivative of the dissipation function requested at zero gradient."""


class TopologyError(GasPipeError):
    pass


class InfeasibleSteadyState(GasPipeError):
    pass


class IntegrationFailure(GasPipeError):
    pass


class NoPeriodicOrbit(GasPipeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
