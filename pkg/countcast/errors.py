class CountcastError(Exception):
    """Base class for every error raised by countcast"""


class InputError(CountcastError, ValueError):
    """Bad input data or configuration (CLI exit code 2)"""


class ComputationError(CountcastError, RuntimeError):
    """A numerical step failed (CLI exit code 1)"""


class EventFormatError(InputError):
    def __init__(self, line, message):
        """
        :param line: int, 1-based line number in the events file (header is line 1)
        :param message: str
        """
        super().__init__('line %d: %s' % (line, message))
        self.line = line


class HierarchyError(InputError):
    pass


class SpanError(InputError):
    pass


class ConfigError(InputError):
    pass


class GapError(InputError):
    pass


class TrainingError(ComputationError):
    def __init__(self, message, epoch=None, batch=None, loss=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class DegenerateInputWarning(UserWarning):
    """Emitted when a channel falls back to a trivial value instead of failing"""
