"""Exception types shared across the package."""


class QdepError(Exception):
    """Base class for all qdep-specific errors."""


class ZeroVarianceError(QdepError):
    """A data column is constant, so no sample scale factor exists."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} is constant; scale factor undefined")


class SampleTooSmallError(QdepError):
    """Not enough observations for the requested decomposition."""


class DegenerateNullError(QdepError):
    """The plug-in null moments are unusable (E1 <= 0 or V1 <= 0)."""

    def __init__(self, e1: float, v1: float):
        self.e1 = e1
        self.v1 = v1
        super().__init__(
            f"degenerate null approximation (E1={e1:.3e}, V1={v1:.3e}); "
            "fall back to permutation calibration"
        )


class TruncationTooTightError(QdepError):
    """Quadrature truncation box leaves too much weight mass outside."""


class GridTooCoarseError(QdepError):
    """Grid quadrature failed its Richardson self-consistency check."""


class GapZeroError(QdepError):
    """Power bound undefined: critical value equals the alternative value."""
