"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (wrong lattice, axis, rank, ...)."""


class DomainError(ValueError):
    """Input data is outside the operation's domain (non-SPD metric, bad density, ...)."""


class DecompositionError(RuntimeError):
    """A decomposition solve failed; carries the solver report when available."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InstabilityError(RuntimeError):
    """A time integration violated its stability guard (e.g. energy increased)."""


class RgfParseError(ValueError):
    """A field file failed to parse; carries the byte offset where parsing stopped."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
