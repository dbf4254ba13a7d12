"""Exception hierarchy shared by the library and the command line.

Each family maps onto one CLI exit status.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_INVARIANT = 5


class CropDetError(Exception):
    exit_code = 1


class ConfigError(CropDetError, ValueError):
    """Bad configuration value or combination of options."""

    exit_code = EXIT_CONFIG


class InvalidInputError(CropDetError, ValueError):
    """Input violates an operation's precondition (degenerate box, bad window...)."""

    exit_code = EXIT_INVARIANT


class ShapeError(InvalidInputError):
    """Tensor shapes or arities do not line up."""

    exit_code = EXIT_INVARIANT


class AnnotationParseError(CropDetError, ValueError):
    """Malformed annotation document or text table."""

    exit_code = EXIT_PARSE

    def __init__(self, message, source=None, element=None, line=None):
        self.source = source
        self.element = element
        self.line = line
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if element:
            where.append(f"<{element}>")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


class ImageIOError(CropDetError, OSError):
    """Unreadable, truncated or malformed image file."""

    exit_code = EXIT_IO
