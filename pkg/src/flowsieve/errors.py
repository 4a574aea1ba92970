"""Exception types shared across the toolkit."""


class DataError(Exception):
    """Malformed or contract-violating input data (CLI exit code 3)."""


class TrainingDiverged(Exception):
    """Optimization produced a non-finite loss or parameters (CLI exit code 4)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch
