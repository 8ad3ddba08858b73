"""Exception hierarchy.

Two families: validation problems (bad input, malformed files, violated
preconditions) and numerical failures (resonances, solver breakdown,
non-convergence). The CLI maps them to exit codes 1 and 2.
"""


class MfpdError(Exception):
    """Base class for all package errors."""


class ValidationError(MfpdError, ValueError):
    """Input violates a documented precondition."""


class NumericalError(MfpdError, RuntimeError):
    """A numerical stage could not produce a trustworthy result."""


class MeshFormatError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshResourceError(ValidationError):
    pass


class EllipticityError(ValidationError):
    pass


class IlluminationSyntaxError(ValidationError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset})")


class ResonanceError(NumericalError):
    """Requested frequency is too close to an estimated Dirichlet eigenvalue."""

    def __init__(self, k, eigenvalue, gap, gap_tol):
        self.k = k
        self.eigenvalue = eigenvalue
        self.gap = gap
        self.gap_tol = gap_tol
        super().__init__(
            f"frequency k={k:.6e} rejected: relative gap {gap:.3e} to eigenvalue "
            f"{eigenvalue:.6e} is below resonance tolerance {gap_tol:.3e}"
        )


class SolverError(NumericalError):
    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (achieved relative residual {residual:.3e})"
        super().__init__(message)


class EigenvalueError(NumericalError):
    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class ReconstructionError(NumericalError):
    pass
