"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to the documented process status without inspecting messages:
0 success, 1 verification/feasibility failure, 2 input error,
3 internal numeric failure.
"""


class ArtifactError(Exception):
    exit_code = 3


class InputError(ArtifactError, ValueError):
    """Malformed or inconsistent user input."""

    exit_code = 2


class DimensionError(InputError):
    pass


class SchemaError(InputError):
    pass


class IllPosedError(InputError):
    """``I - D11 @ Delta`` is (numerically) singular for some admissible delta."""

    def __init__(self, message, delta=None):
        super().__init__(message)
        self.delta = delta


class UnboundedThetaError(InputError):
    pass


class UnstableSystemError(InputError):
    pass


class NumericError(ArtifactError):
    exit_code = 3


class FactorizationError(NumericError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class InfeasibleError(ArtifactError):
    """No grid point produced a certificate. ``report`` lists per-point details."""

    exit_code = 1

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or []


class CorrectionInfeasibleError(ArtifactError):
    """Floating-point error too large for the ellipsoid shrink factor to stay positive."""

    exit_code = 1


class VerificationError(ArtifactError):
    exit_code = 1


class ContractError(ArtifactError):
    exit_code = 2
