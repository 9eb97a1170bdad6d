"""Exception types shared across the solvers and the CLI."""


class DomainError(ValueError):
    """A state or query point lies outside the admissible region."""


class NonPositiveCoefficient(ValueError):
    """A coefficient field failed the positivity audit on the domain box."""


class ConstraintBreach(RuntimeError):
    """A boundary trajectory touched its hard constraint surface."""


class SingularDenominator(RuntimeError):
    """The shared denominator of the boundary ODE crossed zero within a step."""


class StepError(RuntimeError):
    """Richardson check on an RK4 step exceeded the per-step error budget."""


class NonConvergence(RuntimeError):
    """An iterative solve did not reach its tolerance within the cap."""


class UnderdeterminedRegion(ValueError):
    """Boundary data does not pin down the reflection-region coefficients."""


class ConfigError(ValueError):
    """A run configuration file is malformed or inconsistent."""


class ResolutionWarning(UserWarning):
    """Grid resolution is suspect, e.g. sign changes in adjacent cells."""
