"""Exception hierarchy for sortreg."""


class SortregError(Exception):
    """Base class for all package errors."""


class DataError(SortregError):
    """Input data violates a structural requirement."""


class DimensionMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class ZeroVariance(DataError):
    def __init__(self, t, column=None):
        self.t = t
        self.column = column
        super().__init__(f"zero cross-sectional std in period {t}, column {column}")


class NonPositiveValue(DataError):
    def __init__(self, t, row, column=None):
        self.t = t
        self.row = row
        self.column = column
        super().__init__(f"non-positive value in period {t}, row {row}, column {column}")


class JTooLarge(SortregError):
    def __init__(self, J, n):
        self.J = J
        self.n = n
        super().__init__(f"J={J} exceeds the available sample size n={n}")


class EmptyCellAt(SortregError):
    """An evaluation point falls in a portfolio with no assets."""

    def __init__(self, z, periods=None):
        self.z = z
        self.periods = list(periods) if periods is not None else []
        where = f" in periods {self.periods}" if self.periods else ""
        super().__init__(f"evaluation point {z} falls in an empty portfolio{where}")


class PeriodFitFailed(SortregError):
    def __init__(self, periods):
        self.periods = list(periods)
        super().__init__(f"singular control design in periods {self.periods}")


class InsufficientPeriods(SortregError):
    def __init__(self, T, needed=2):
        self.T = T
        super().__init__(f"need at least {needed} periods, got {T}")


class NoControls(SortregError):
    pass


class EmptyGrid(SortregError):
    pass


class InvalidSpec(SortregError):
    pass


class ExperimentFailed(SortregError):
    """Too many Monte Carlo replications failed."""


class ConfigError(SortregError):
    pass
