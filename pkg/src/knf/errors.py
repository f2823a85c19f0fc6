"""Exception types shared across the package."""


class KnfError(Exception):
    pass


class DimensionError(KnfError, ValueError):
    """Array shapes do not match the declared contract."""


class NumericError(KnfError, ArithmeticError):
    """Non-finite values or numeric overflow in a computation."""


class FormatError(KnfError, ValueError):
    """Malformed checkpoint or data file."""


class ParseError(KnfError, ValueError):
    """Unparsable text input (CSV, manifest, config)."""
