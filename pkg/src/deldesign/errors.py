"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: UsageError -> 1, data/parse errors -> 2,
numeric failures -> 3.
"""


class DelDesignError(Exception):
    """Base class for all package errors."""


class UsageError(DelDesignError):
    """Bad command-line usage or invalid run configuration."""


class ConfigError(DelDesignError):
    """Structurally valid but semantically infeasible configuration."""


class DimensionError(DelDesignError):
    """Mismatched shapes, lengths, or widths."""


class InvalidTransitionError(DelDesignError):
    """An environment action that is not valid in the current state."""


class EmptyLibraryError(DelDesignError):
    """Mean score requested for a selection with an empty Cartesian product."""


class UndefinedDiversityError(DelDesignError):
    """Diversity requested for fewer than two states."""


class InvalidTrajectoryError(DelDesignError):
    """A trajectory whose recorded actions have zero policy probability."""


class NoValidActionError(DelDesignError):
    """Masked softmax over a fully masked action set."""


class NumericError(DelDesignError):
    """Non-finite values encountered during training or evaluation."""


class ParseError(DelDesignError):
    """Malformed input file.

    ``offset`` is the byte offset (binary formats) or line number (text
    formats) at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset
