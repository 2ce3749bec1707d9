"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for data and resource errors raised by this package."""


class FormatError(ToolkitError):
    """An input file violates its declared format.

    Carries the offending path and 1-based line number when known so that
    callers (and the CLI) can point at the exact spot.
    """

    def __init__(self, message: str, path=None, line: int | None = None):
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)
        self.path = path
        self.line = line
