"""Exception hierarchy.

Every error raised by the library derives from ``CloudLogitError``; the CLI
maps the subclasses onto exit codes via ``exit_code``.
"""


class CloudLogitError(Exception):
    kind = "error"
    exit_code = 1


class InvalidArgumentError(CloudLogitError, ValueError):
    kind = "invalid-argument"
    exit_code = 2


class ConfigurationError(CloudLogitError, ValueError):
    kind = "config"
    exit_code = 2


class DegenerateInputError(CloudLogitError, ValueError):
    kind = "degenerate-input"
    exit_code = 4


class ShapeError(CloudLogitError, ValueError):
    kind = "shape"
    exit_code = 2


class ContractError(CloudLogitError, RuntimeError):
    kind = "contract"
    exit_code = 1


class DataError(CloudLogitError, ValueError):
    kind = "data"
    exit_code = 3


class ParseError(DataError):
    kind = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    kind = "schema"


class EmptyDatasetError(DataError):
    kind = "empty-dataset"


class NumericalError(CloudLogitError, FloatingPointError):
    kind = "numerical"
    exit_code = 4

    def __init__(self, message, iteration=None, lr=None):
        super().__init__(message)
        self.iteration = iteration
        self.lr = lr


class CheckpointError(CloudLogitError, IOError):
    kind = "checkpoint"
    exit_code = 5
