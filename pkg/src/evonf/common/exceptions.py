from typing import ClassVar, Optional


class EvoNFException(Exception):
    """Base class for all errors raised by the evonf package.

    Every subclass carries a short, machine readable ``code``. The command line front end uses
    it as the prefix of its single line diagnostic.
    """

    code: ClassVar[str] = "evonf-error"


class InvalidParameterError(EvoNFException, ValueError):
    code = "invalid-parameter"


class DimensionMismatchError(EvoNFException, ValueError):
    code = "dimension-mismatch"


class NoActiveRulesError(EvoNFException, ValueError):
    code = "no-active-rules"


class SizeOverflowError(EvoNFException, ValueError):
    code = "size-overflow"


class OutOfRangeError(EvoNFException, ValueError):
    code = "out-of-range"


class LayoutMismatchError(EvoNFException, ValueError):
    code = "layout-mismatch"


class ConfigError(EvoNFException, ValueError):
    code = "config-invalid"


class DatasetEmptyError(EvoNFException, ValueError):
    code = "dataset-empty"


class DatasetTooSmallError(EvoNFException, ValueError):
    code = "dataset-too-small"


class ZeroRangeError(EvoNFException, ValueError):
    code = "zero-range"


class ZeroVarianceError(EvoNFException, ValueError):
    code = "zero-variance"


class EmptyPopulationError(EvoNFException, ValueError):
    code = "empty-population"


class TrainingDivergedError(EvoNFException, ArithmeticError):
    code = "divergence"


class MissingArtifactError(EvoNFException, FileNotFoundError):
    code = "missing-artifact"


class DataIOError(EvoNFException, OSError):
    code = "io-error"


class CellError(EvoNFException, ValueError):
    """Error located at a specific cell of a tabular input file.

    Row numbers are 1-based and count data rows, so the header is not row 1.
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        """Initialize CellError.

        Args:
            message: human readable description
            row: 1-based data row number, if known
            column: column name, if known
        """
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.row = row
        self.column = column


class ParseError(CellError):
    code = "parse-error"


class RangeViolationError(CellError):
    code = "range-violation"
