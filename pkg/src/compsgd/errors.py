"""Exception types shared across the package.

The CLI maps ValidationError to exit code 2 and InvariantViolation to
exit code 3; everything else is a plain crash.
"""


class ValidationError(ValueError):
    """A parameter, config field, or input file failed validation."""


class ConfigError(ValidationError):
    """An experiment/algorithm configuration is inconsistent."""


class NoUniqueOptimumError(ValidationError):
    """The mean Hessian is singular and the linear system is inconsistent."""


class NotInLinearRegimeError(ValidationError):
    """Rate fitting was requested on a window containing nonpositive gaps."""


class InvariantViolation(RuntimeError):
    """A runtime-checked algorithm invariant failed during a run."""
