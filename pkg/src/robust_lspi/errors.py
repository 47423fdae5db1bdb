"""Exception hierarchy shared by every module."""


class RobustLSPIError(Exception):
    pass


class DomainError(RobustLSPIError, ValueError):
    """An argument lies outside the domain of the operation."""


class SolverError(RobustLSPIError, ArithmeticError):
    """A linear solve failed or produced non-finite output."""


class NumericError(RobustLSPIError, ArithmeticError):
    pass


class RankError(NumericError):
    """A feature matrix or Gram matrix is rank deficient."""


class NonConvergenceError(RobustLSPIError, RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class NonContractionError(NumericError):
    """Fixed-point iteration diverged, so the projected operator is not a contraction."""


class AssumptionViolation(RobustLSPIError):
    pass


class UnsupportedVariantError(RobustLSPIError, TypeError):
    pass


class ConfigError(RobustLSPIError, ValueError):
    pass
