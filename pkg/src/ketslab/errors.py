"""Exception hierarchy shared across the lab."""


class KetsLabError(Exception):
    """Base class for every error raised by this package."""


class ZeroNormError(KetsLabError, ValueError):
    pass


class DimensionError(KetsLabError, ValueError):
    pass


class EmptyAggregateError(KetsLabError, ValueError):
    pass


class InsufficientSamplesError(KetsLabError, ValueError):
    pass


class InsufficientClientsError(KetsLabError, ValueError):
    pass


class PoolExhaustedError(KetsLabError, RuntimeError):
    """Every client in the pool has been excluded."""


class InfeasiblePartitionError(KetsLabError, ValueError):
    pass


class FormatError(KetsLabError, ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(KetsLabError, FloatingPointError):
    def __init__(self, epoch, batch, message="loss became NaN"):
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigError(KetsLabError, ValueError):
    """Invalid experiment configuration; ``key``/``line`` locate the offender when known."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.key = key
        self.line = line
