"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes (config -> 2, convergence -> 3,
validation failure -> 4); the HTTP service maps them onto status codes.
"""


class JumpBsdeError(Exception):
    """Base class for all package errors."""


class ParameterError(JumpBsdeError, ValueError):
    """A scalar argument is outside its admissible range (alpha <= 0, tol <= 0, ...)."""


class ShapeError(JumpBsdeError, ValueError):
    """Array arguments are misaligned with the jump grid or the lattice."""


class ConfigError(JumpBsdeError, ValueError):
    """A run configuration is invalid. Carries a JSON-pointer-ish path."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class StepSizeError(JumpBsdeError, ValueError):
    """The time step violates a positivity / probability constraint.

    ``suggested_n_steps`` carries the smallest step count that would satisfy
    the violated constraint, when one can be computed.
    """

    def __init__(self, message: str, suggested_n_steps: int | None = None):
        self.suggested_n_steps = suggested_n_steps
        if suggested_n_steps is not None:
            message = f"{message} (suggested n_steps >= {suggested_n_steps})"
        super().__init__(message)


class SingularCoefficientError(JumpBsdeError, ZeroDivisionError):
    """sigma(t) vanished where the market price of risk is needed."""


class AdmissibilityError(JumpBsdeError, ValueError):
    """A strategy value leaves the constraint interval."""


class ConvergenceError(JumpBsdeError, RuntimeError):
    """The per-node fixed-point iteration failed to contract.

    Carries the node id (time index, node index) and the last residual: the
    usual cause is a time step too large for the generator's Lipschitz
    constant.
    """

    def __init__(self, message: str, node: tuple[int, int] | None = None,
                 residual: float | None = None):
        self.node = node
        self.residual = residual
        if node is not None:
            message = f"{message} at node (slice {node[0]}, index {node[1]})"
        if residual is not None:
            message = f"{message}, last residual {residual:.3e}"
        super().__init__(message)
