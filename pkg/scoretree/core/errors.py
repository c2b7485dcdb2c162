"""Error hierarchy shared by every layer; the CLI maps these to exit codes."""


class ScoreTreeError(Exception):
    pass


# --- Samples & parameters ---

class EmptySampleError(ScoreTreeError, ValueError):
    def __init__(self, message: str = "empty sample set"):
        super().__init__(message)


class NonFiniteValueError(ScoreTreeError, ValueError):
    pass


class InvalidParameterError(ScoreTreeError, ValueError):
    pass


# --- Trees ---

class CategoricalCardinalityError(ScoreTreeError, ValueError):
    def __init__(self, column: str, cardinality: int, cutoff: int):
        super().__init__(
            f"categorical cardinality exceeds cutoff: column '{column}' has {cardinality} categories (cutoff {cutoff})"
        )


class MissingValueError(ScoreTreeError, ValueError):
    pass


class SchemaMismatchError(ScoreTreeError, ValueError):
    pass


# --- Dataset files ---

class DatasetFormatError(ScoreTreeError, ValueError):
    pass


class MissingResponseError(DatasetFormatError):
    pass


class NonNumericResponseError(DatasetFormatError):
    pass


class EmptyFileError(DatasetFormatError):
    pass


class RaggedRowError(DatasetFormatError):
    pass


# --- Model files ---

class ModelFormatError(ScoreTreeError, ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


# --- Experiments ---

class MissingCellError(ScoreTreeError, LookupError):
    pass


class ExperimentError(ScoreTreeError):
    def __init__(self, context: dict, cause: Exception):
        self.context = context
        where = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"{where}: {cause}")
