"""
Exception hierarchy for msglmb.

Every error raised on purpose by the package derives from ``TrackingError`` so
callers (and the CLI) can tell library failures apart from programming bugs.
"""

from __future__ import annotations


class TrackingError(Exception):
    """Base class for all errors raised by msglmb."""


class PointBehindCamera(TrackingError, ValueError):
    """A point or ellipsoid centre lies on or behind the camera's principal plane."""


class DegenerateConic(TrackingError, ValueError):
    """The projected outline of an ellipsoid is not a bounded ellipse."""


class BudgetExceeded(TrackingError, RuntimeError):
    """Exhaustive association enumeration would exceed its map budget."""

    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"enumeration needs up to {required} maps, budget is {budget}")


class DuplicateBirthLabel(TrackingError, ValueError):
    """A birth label collides with a label already present in the density."""


class EmptyFrameSet(TrackingError, ValueError):
    """An update was requested without any configured sensor."""


class NoConfidences(TrackingError, ValueError):
    """AMOTA was requested for estimates that carry no confidence scores."""


class ParseError(TrackingError, ValueError):
    """Malformed input file, record or configuration value."""

    def __init__(
        self,
        message: str,
        *,
        path: str | None = None,
        line: int | None = None,
        field: str | None = None,
    ):
        self.path = path
        self.line = line
        self.field = field
        location = []
        if path is not None:
            location.append(str(path) if line is None else f"{path}:{line}")
        if field is not None:
            location.append(f"field {field!r}")
        prefix = ", ".join(location)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SchemaVersionMismatch(ParseError):
    """A record declares a schema version this package does not read."""
