"""Exception types raised across the package.

DataError subclasses signal problems with user-supplied files or dataset
construction; the CLI maps them to exit code 2. Everything else is a plain
runtime failure of the operation that raised it.
"""


class QsarnnError(Exception):
    """Base class for all package-specific errors."""


class DataError(QsarnnError):
    """A problem with input files or dataset construction."""


class DuplicateCompound(DataError):
    """A compound id occurs more than once in a descriptor file."""


class ParseError(DataError):
    """A cell could not be parsed; carries 1-based row and column."""

    def __init__(self, row: int, column: int, message: str = ""):
        self.row = row
        self.column = column
        detail = f" ({message})" if message else ""
        super().__init__(f"row {row}, column {column}: unparseable cell{detail}")


class EmptyInput(DataError):
    """An input file contains no data rows."""


class InsufficientRows(DataError):
    """Too few rows for the requested statistic."""


class AssayTooSmall(DataError):
    """An assay has too few cases for the requested split or folding."""


class UnknownAssay(DataError):
    """A referenced assay id is not present in the dataset."""


class DuplicateLabel(DataError):
    """A (compound_id, assay_id) pair occurs more than once in a label file."""


class UndefinedGain(QsarnnError):
    """Information gain is undefined (labels contain a single class)."""


class BadFeatureCount(QsarnnError):
    """Requested feature count is outside [1, descriptor count]."""


class ShapeError(QsarnnError):
    """Array shapes do not line up."""


class NumericalDivergence(QsarnnError):
    """A forward pass or parameter update produced non-finite values."""

    def __init__(self, where: str = ""):
        self.where = where
        super().__init__(f"non-finite values in {where}" if where else "non-finite values")


class StaleTrace(QsarnnError):
    """A forward trace does not match the parameters passed to backward."""


class BadEpoch(QsarnnError):
    """Epoch index outside [0, epochs)."""


class EmptyAssay(QsarnnError):
    """A minibatch quota refers to an assay with no cases."""


class UndefinedAUC(QsarnnError):
    """AUC is undefined (one of the two classes is absent)."""


class NoValidRuns(QsarnnError):
    """Every training run in a batch of runs diverged."""


class BadVariance(QsarnnError):
    """A variance input is negative."""


class GPError(QsarnnError):
    """Gaussian process fitting failed even after jitter escalation."""
