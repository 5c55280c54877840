"""Exception types shared across the package."""


class TSPRankError(Exception):
    pass


class DimensionError(TSPRankError, ValueError):
    pass


class InvalidSelectionError(TSPRankError, ValueError):
    """An edge set that is not a single open path over all nodes."""


class CapacityError(TSPRankError, ValueError):
    """Instance is larger than the requested backend supports."""


class SolverTimeout(TSPRankError):
    """Raised when the MILP time budget runs out before optimality is proven.

    ``tour``/``score`` carry the best incumbent found (may be None if no
    feasible solution was seen), ``gap`` the remaining bound gap.
    """

    def __init__(self, message, tour=None, score=None, gap=None):
        super().__init__(message)
        self.tour = tour
        self.score = score
        self.gap = gap
        self.optimal = False


class FormulationError(TSPRankError):
    pass


class UndefinedMetricError(TSPRankError, ValueError):
    pass


class IngestionError(TSPRankError, ValueError):
    pass


class CorruptModelError(TSPRankError, ValueError):
    pass
