"""Exception hierarchy shared by all modules."""


class PisssError(Exception):
    """Base class for every domain error raised by this package."""


class ConfigError(PisssError):
    """A configuration violates an invariant or contains unknown keys."""


class InvalidSpec(ConfigError):
    """An architecture description cannot be built as requested."""


class DataError(PisssError):
    """Dataset ingestion failed (missing file, bad mask, dim mismatch...)."""


class UnknownColor(DataError):
    """A mask pixel color is not in the palette."""

    def __init__(self, color, position):
        self.color = tuple(int(c) for c in color)
        self.position = tuple(int(p) for p in position)
        super().__init__(
            f"mask color {self.color} at (y={self.position[0]}, x={self.position[1]}) "
            f"is not in the palette"
        )


class TrainingDiverged(PisssError):
    """The training loss became non-finite."""


class IncompatibleCheckpoint(PisssError):
    """A checkpoint cannot be resumed against the requested setup."""
