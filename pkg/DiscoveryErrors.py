"""
Parent Discovery - Error Types
Exception hierarchy shared by the simulator, estimators, tests, search and CLI.

Every error carries a category ("input" or "numerical") that the CLI maps to
an exit status, the same way the server layer maps failures to status codes.
"""

from typing import Optional, Sequence

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class DiscoveryError(Exception):
    """Base class for all parent-discovery failures"""
    category = "input"

    @property
    def exit_code(self) -> int:
        return EXIT_NUMERICAL_ERROR if self.category == "numerical" else EXIT_INPUT_ERROR


class InvalidArgumentError(DiscoveryError, ValueError):
    """Arguments inconsistent with an operation's preconditions"""


class InsufficientSamplesError(InvalidArgumentError):
    """Too few rows for the requested regression or sample size"""


class NumericalFailureError(DiscoveryError):
    """A linear solve or decomposition failed"""
    category = "numerical"


class SingularMatrixError(NumericalFailureError):
    """A covariance submatrix or structural matrix is singular"""


class RankDeficiencyError(NumericalFailureError):
    """Design matrix is (numerically) rank deficient"""

    def __init__(self, message: str, columns: Sequence[str] = ()):
        super().__init__(message)
        self.columns = list(columns)


class DegenerateFitError(NumericalFailureError):
    """Matching fit has no identifiable lambda (gamma invariant across environments)"""


class DegreesOfFreedomError(DiscoveryError):
    """Too few environments for the number of matched coefficients"""


class DatasetParseError(DiscoveryError):
    """A CSV cell could not be parsed as a finite number"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumnError(DiscoveryError):
    """A requested column is absent from the CSV header"""


class TooFewRowsError(DiscoveryError):
    """An environment has fewer rows than regressions require"""

    def __init__(self, message: str, environment: Optional[str] = None):
        super().__init__(message)
        self.environment = environment
