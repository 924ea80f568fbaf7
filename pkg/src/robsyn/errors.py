"""Exception types shared across the package."""


class RobsynError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(RobsynError):
    """Array shapes are inconsistent with the declared network or problem dimensions."""


class SchemaError(RobsynError):
    """A serialized document or configuration does not match the expected schema."""


class NonConvergence(RobsynError):
    """Fixed-point iteration exhausted its budget without meeting the residual tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"fixed-point iteration did not converge: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class Infeasible(RobsynError):
    """The optimization problem admits no feasible point at the requested tolerances."""


class NumericalFailure(RobsynError):
    """The solver stalled or lost numerical precision before reaching a conclusive status."""


class NonPositiveDefinite(RobsynError):
    """A matrix required to be positive definite is not."""


class SingularH(RobsynError):
    """The condensed quadratic cost matrix is singular and the problem cannot be reduced."""


class MaxIterations(RobsynError):
    """An iterative solver hit its iteration cap before reaching the requested accuracy."""
