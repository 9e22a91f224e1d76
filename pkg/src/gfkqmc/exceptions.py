"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`GFKError`
so the command line front end can turn it into a machine-readable record.
"""


class GFKError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigError(GFKError, ValueError):
    """Invalid system, trial, walk or run configuration.

    ``key`` names the offending configuration entry when known.
    """

    code = "config"

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SingularConfiguration(GFKError, ArithmeticError):
    """Two point charges are closer than the singularity floor."""

    code = "singular_configuration"


class NonFiniteDrift(GFKError, ArithmeticError):
    """The trial-function drift has a non-finite component."""

    code = "non_finite_drift"


class PathAborted(GFKError, RuntimeError):
    """A path exceeded the retry budget for singular steps."""

    code = "path_aborted"


class NonConverged(GFKError, RuntimeError):
    """A sampling estimate did not reach the requested precision."""

    code = "non_converged"


class DegenerateEnsemble(GFKError, ArithmeticError):
    """Ensemble averages cannot be turned into an estimate."""

    code = "degenerate_ensemble"


class FitFailed(GFKError, RuntimeError):
    """Neither the decay fit nor the plateau fallback produced finite values."""

    code = "fit_failed"


class UnitMismatch(GFKError, ValueError):
    """Energies with incompatible units were combined."""

    code = "unit_mismatch"
