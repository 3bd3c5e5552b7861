"""
Exceptions raised by pedorigin.
"""


class PedOriginError(Exception):
    """Parent class for every error raised by pedorigin."""


class ValidationError(PedOriginError, ValueError):
    """Invalid configuration value or argument."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class GridMismatchError(ValidationError):
    """Heatmap grids of two datasets (or a model and its input) disagree."""

    def __init__(self, expected, found):
        super().__init__(f"grid metadata mismatch: expected {expected}, found {found}")
        self.expected = expected
        self.found = found


class NoWalkableTarget(PedOriginError):

    def __str__(self):
        return "Target segment does not cover any walkable grid cell."


class PlacementError(PedOriginError):

    def __init__(self, origin: str, placed: int, requested: int):
        super().__init__("")
        self.origin = origin
        self.placed = placed
        self.requested = requested

    def __str__(self):
        return (
            f"waiting area too small: placed {self.placed} of {self.requested} "
            f"agents in the {self.origin} waiting area"
        )


class TrajectoryParseError(PedOriginError):
    """Malformed line in a trajectory file."""

    def __init__(self, reason: str, line_number: int, source: str = "<stream>"):
        super().__init__("")
        self.reason = reason
        self.line_number = line_number
        self.source = source

    def __str__(self):
        return f"{self.source}:{self.line_number}: {self.reason}"


class DatasetFormatError(PedOriginError):
    """Malformed dataset, model or grid file."""

    def __init__(self, reason: str, line_number: int | None = None, source: str = "<stream>"):
        super().__init__("")
        self.reason = reason
        self.line_number = line_number
        self.source = source

    def __str__(self):
        if self.line_number is None:
            return f"{self.source}: {self.reason}"
        return f"{self.source}:{self.line_number}: {self.reason}"


class UndefinedDensity(PedOriginError):

    def __str__(self):
        return "undefined density: no pedestrians given"


class FetchError(PedOriginError):
    pass
