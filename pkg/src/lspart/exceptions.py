"""Exception and warning types shared across the package."""


class LspartError(Exception):
    """Base class for all lspart errors."""


class InputError(LspartError):
    """Invalid user input: bad data, malformed files, out-of-support points."""


class NumericsError(LspartError):
    """Numerical infeasibility: underdetermined fits, non-finite results."""


class CollapsedKnotsWarning(UserWarning):
    """Duplicate quantile knots were collapsed and kappa reduced."""


class RankDeficiencyWarning(UserWarning):
    """Gram matrix is rank deficient; minimum-norm solution in use."""


class CappedWeightWarning(UserWarning):
    """An HC leverage weight hit the configured cap."""


class DegenerateBandWarning(UserWarning):
    """Grid points with zero standard error were excluded from the supremum."""
