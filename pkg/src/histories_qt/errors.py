"""Exception types shared across the package.

Structural problems (wrong shapes, unmapped indices, capacity overruns) are
kept distinct from physics-level failures (non-positive states, orthogonal
boundary conditions, non-decoherent history sets) so callers can react to
each appropriately.
"""


class HistoriesError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(HistoriesError, ValueError):
    """Operators that must share a Hilbert-space dimension do not."""


class NonHermitianError(HistoriesError, ValueError):
    """An operator required to be Hermitian is not, beyond tolerance."""

    def __init__(self, message: str, violation: float):
        super().__init__(f"{message} (violation {violation:.3e})")
        self.violation = violation


class NotPositiveSemidefiniteError(HistoriesError, ValueError):
    """A density matrix has an eigenvalue below the allowed tolerance."""

    def __init__(self, message: str, eigenvalue: float):
        super().__init__(f"{message} (offending eigenvalue {eigenvalue:.3e})")
        self.eigenvalue = eigenvalue


class InvalidStateError(HistoriesError, ValueError):
    """A state-derived quantity (trace, occupation) is out of range."""


class OrthogonalBoundaryError(HistoriesError, ValueError):
    """Initial and final conditions have vanishing overlap.

    The two-boundary normalization diverges and probabilities are
    undefined.
    """


class BranchCapacityError(HistoriesError, ValueError):
    """A history set would exceed the configured branch cap."""


class PartitionCoverageError(HistoriesError, ValueError):
    """A partition does not cover every fine-grained history exactly once."""


class UndefinedProbabilitiesError(HistoriesError, RuntimeError):
    """Probabilities were requested for a non-decoherent history set."""


class ConfigError(HistoriesError, ValueError):
    """An experiment configuration is malformed or incomplete."""
