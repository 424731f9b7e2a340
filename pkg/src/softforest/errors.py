"""Exception types shared across the package."""


class SoftForestError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SoftForestError):
    """Raised when a dataset fails to load or validate."""


class ModelFormatError(SoftForestError):
    """Raised when a model file cannot be read (bad structure or version)."""


class TrainingDiverged(SoftForestError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, batch_index: int, value: float):
        self.epoch = epoch
        self.batch_index = batch_index
        self.value = value
        super().__init__(
            f"non-finite training loss ({value!r}) at epoch {epoch}, batch {batch_index}"
        )
