"""Exception hierarchy shared across the package."""


class RasorError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RasorError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RasorError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(RasorError, ValueError):
    """Invalid, unknown or inconsistent configuration."""


class FormatError(RasorError, ValueError):
    """An input file does not follow its expected format."""


class UnreachableGold(ContractError):
    """The gold span is not among the candidates (e.g. longer than the cap).

    Training code treats this as a skip signal and counts it.
    """
