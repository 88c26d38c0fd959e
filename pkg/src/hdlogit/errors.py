"""Exception hierarchy for estimation failures.

Every error raised by a fitting routine derives from
:class:`EstimationError`, so the Monte Carlo runner can record a failed
replication with a single ``except`` clause.
"""


class EstimationError(RuntimeError):
    """Base class for recoverable per-dataset fitting failures."""


class NonConvergenceError(EstimationError):
    def __init__(self, message, last_iterate=None, kkt_violation=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.kkt_violation = kkt_violation


class SeparationError(EstimationError):
    """The logistic likelihood has no finite maximiser on the requested support."""


class RankError(EstimationError):
    """Singular Fisher information or an over-saturated support."""


class DegenerateLoadingError(EstimationError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class WeakInstrumentError(EstimationError):
    """The instrument is (numerically) uncorrelated with the weighted treatment."""


class DataError(ValueError):
    """Malformed input data (missing columns, non-binary outcome, NaN cells)."""
