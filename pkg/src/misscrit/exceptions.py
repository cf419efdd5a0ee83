"""Exception types raised across the package."""


class MisscritError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MisscritError, ArithmeticError):
    """A matrix expected to be SPD failed Cholesky factorization."""


class NonFiniteIntegrand(MisscritError, ArithmeticError):
    pass


class NonFiniteValue(MisscritError, ArithmeticError):
    pass


class QuadratureUnreliable(MisscritError, ArithmeticError):
    """Outer-product and negative-Hessian forms of an information matrix disagree."""


class LabelOutOfRange(MisscritError, ValueError):
    pass


class ConstraintViolation(MisscritError, ValueError):
    """A free parameter vector does not map to a valid constrained point."""


class EmptyComponent(MisscritError, ArithmeticError):
    pass


class VarianceFloorHit(MisscritError, ArithmeticError):
    pass


class AllRestartsDegenerate(MisscritError, RuntimeError):
    pass


class DegenerateFit(MisscritError, ValueError):
    pass


class TooManyDegenerate(MisscritError, RuntimeError):
    pass
