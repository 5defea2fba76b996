"""Typed error hierarchy shared across the package.

Every deliberate failure mode raises a subclass of :class:`PanelFactorError`
so callers (and the CLI) can distinguish numerical degeneracy from plain
usage bugs.
"""
from __future__ import annotations


class PanelFactorError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(PanelFactorError):
    """Panel shapes or row lengths do not line up."""


class NonFiniteEntry(PanelFactorError):
    """A panel entry is NaN or infinite."""


class RankOutOfRange(PanelFactorError):
    """Requested rank is negative or exceeds min(n, T)."""


class DegenerateDenominator(PanelFactorError):
    """The residualized regressor carries (numerically) zero variation."""


class CollinearControls(PanelFactorError):
    """The control design in a partialled regression is rank-deficient."""


class UnitDegenerate(PanelFactorError):
    """A unit-level regression has no usable regressor variation."""

    def __init__(self, unit: int, message: str | None = None):
        self.unit = int(unit)
        super().__init__(message or f"unit {unit} has no regressor variation")


class RankDeficientAugmentation(PanelFactorError):
    """Cross-sectional-average augmentation matrix is rank deficient."""


class EmptyCluster(PanelFactorError):
    """Every k-means restart produced an empty cluster."""


class AllCellsDegenerate(PanelFactorError):
    """No group/period cell supports a within-cell slope."""


class SingularMeanMatrix(PanelFactorError):
    """The averaged moment matrix cannot be inverted."""


class NegativeWeights(PanelFactorError):
    """Observation weights must be non-negative (and correctly normalized)."""


class MissingLatents(PanelFactorError):
    """The dataset carries no simulation oracle to evaluate."""


class InvalidAlpha(PanelFactorError):
    """AR(1) coefficient outside the supported [0, 1) range."""


class UnknownEstimatorTag(PanelFactorError):
    """Estimator tag not present in the cell configuration."""
