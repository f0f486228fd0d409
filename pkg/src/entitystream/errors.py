"""Exception types shared across the package."""


class ShapeError(ValueError):
    pass


class NumericInputError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


class VocabularyError(KeyError):
    pass


class FormatError(ValueError):
    """Malformed dataset or checkpoint file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CompatibilityError(ValueError):
    pass
