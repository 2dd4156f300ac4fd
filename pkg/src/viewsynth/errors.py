"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Shape or extent mismatch in a tensor primitive.

    Carries the primitive name so failures deep in a network are traceable.
    """

    def __init__(self, op: str, detail: str):
        self.op = op
        self.detail = detail
        super().__init__(f"{op}: {detail}")


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class SceneFormatError(ValueError):
    """Malformed scene file; includes path and line number where known."""

    def __init__(self, path, line: int | None, detail: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {detail}")


class GeometryError(ValueError):
    """Degenerate geometric input (zero-length direction, bad camera, ...)."""


class CheckpointError(ValueError):
    """Unreadable or inconsistent parameter checkpoint file."""
