class NumericalError(RuntimeError):
    """A numerical routine failed to produce a trustworthy answer."""


class UnfittableError(NumericalError):
    """The data cannot be described by the requested model."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
