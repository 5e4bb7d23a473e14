"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shape or resolution does not match what the consumer expects."""


class DegenerateCenterError(ValidationError):
    """A classifier weight row has zero norm and cannot define a center."""


class MappingError(LookupError):
    """A subject id has no corresponding class in the classifier head."""


class NumericError(ArithmeticError):
    """A quantity left its valid numeric domain (NaN, non-positive variance)."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
