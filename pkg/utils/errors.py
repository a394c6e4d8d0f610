"""Exception types shared by the depth pipeline.

Bad input is reported with ValueError subclasses so callers that only know
about ValueError (the Streamlit pages, for example) still catch them.
"""


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op, *shapes, detail=None):
        self.op = op
        self.shapes = shapes
        shape_text = " and ".join(str(tuple(s)) for s in shapes)
        message = f"{op}: incompatible shapes {shape_text}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class ConfigError(ValueError):
    """A configuration file or value could not be used."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Input data is missing, unreadable or inconsistent."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt, truncated or of an unknown version."""


class ImageFormatError(DataError):
    """An image or float-map file could not be decoded."""


class DimensionError(ValueError):
    """Spatial extents are not divisible by what the network needs."""

    def __init__(self, what, extents, divisor):
        self.extents = tuple(extents)
        self.divisor = divisor
        super().__init__(
            f"{what}: extents {self.extents} must be divisible by {divisor}"
        )


class NonFiniteError(FloatingPointError):
    """A NaN or infinity showed up where only finite values are allowed."""

    def __init__(self, message, name=None):
        self.name = name
        super().__init__(message)
