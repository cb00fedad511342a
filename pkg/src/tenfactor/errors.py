"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NumericError(ArithmeticError):
    """Non-finite data or a numerically singular step."""


class TensorFormatError(ValueError):
    """A tensor file could not be parsed.

    ``offset`` is the byte offset (binary files) or line number (CSV) where
    parsing stopped, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class NearTieWarning(UserWarning):
    """Two adjacent eigenvalues are too close to separate their eigenvectors."""
