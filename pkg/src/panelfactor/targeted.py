"""Estimation of conditional-moment fields and weighted slope averages.

The conditional second-moment fields of (Y, X) are recovered by low-rank
approximation of the observable products; weighted averages of the implied
pointwise slopes then estimate targeted effects for caller-chosen weights.
A companion set of utilities quantifies how a multi-regressor weighted
estimand mixes the pointwise slope vectors (contamination weights).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AllCellsDegenerate,
    DegenerateDenominator,
    DimensionMismatch,
    NegativeWeights,
    SingularMeanMatrix,
)
from .estimators import COND_LIMIT, TwgfeOptions, _panel_array, _twgfe_labels
from .lowrank import _rank_r_approx_array
from .panel import PanelMatrix


@dataclass(frozen=True)
class SigmaFieldEstimate:
    """Rank-R estimates of the conditional (co)variance fields.

    sigma_yx = m_yx - m_y * m_x and sigma_xx = m_xx - m_x**2 entrywise,
    where each m-field is the rank-R approximation of the corresponding
    observable product panel.
    """

    rank: int
    m_y: np.ndarray
    m_x: np.ndarray
    m_yx: np.ndarray
    m_xx: np.ndarray
    sigma_yx: np.ndarray
    sigma_xx: np.ndarray


@dataclass(frozen=True)
class ContaminationWeights:
    """How a weighted multi-regressor estimand loads on pointwise slopes.

    ``lam[i, t]`` is the K x K matrix inv(mean_matrix) @ V_it; its panel
    average is the identity, so diagonal entries average to one and
    off-diagonal entries to zero.
    """

    lam: np.ndarray
    mean_matrix: np.ndarray


def estimate_sigma_field(y, x, rank: int) -> SigmaFieldEstimate:
    """Estimate conditional moment fields by rank-R approximation.

    Approximates E[Y], E[X], E[YX], E[X^2] fields from the observed panels
    and forms the covariance fields by the usual moment identities.
    """
    yarr = _panel_array(y, "Y")
    xarr = _panel_array(x, "X")
    if yarr.shape != xarr.shape:
        raise DimensionMismatch(f"Y shape {yarr.shape} differs from X shape {xarr.shape}")
    m_y = _rank_r_approx_array(yarr, rank)
    m_x = _rank_r_approx_array(xarr, rank)
    m_yx = _rank_r_approx_array(yarr * xarr, rank)
    m_xx = _rank_r_approx_array(xarr * xarr, rank)
    return SigmaFieldEstimate(
        rank=rank,
        m_y=m_y,
        m_x=m_x,
        m_yx=m_yx,
        m_xx=m_xx,
        sigma_yx=m_yx - m_y * m_x,
        sigma_xx=m_xx - m_x * m_x,
    )


def _check_weights(weights: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != shape:
        raise DimensionMismatch(f"weights shape {w.shape} differs from panel shape {shape}")
    if (w < 0.0).any():
        raise NegativeWeights("weights must be non-negative")
    return w


def beta_w_estimate(y, x, rank: int, weights, floor_tau: float | None = None) -> float:
    """Weighted average of pointwise slope estimates sigma_yx / sigma_xx.

    ``weights`` must be non-negative with panel mean one (the caller
    normalizes). The denominator field is floored at ``floor_tau``; by
    default the floor is five percent of the median estimated variance.
    """
    yarr = _panel_array(y, "Y")
    xarr = _panel_array(x, "X")
    w = _check_weights(weights, yarr.shape)
    mean_w = float(w.mean())
    if not abs(mean_w - 1.0) <= 1e-8:
        raise NegativeWeights(f"weights must average to one, got mean {mean_w}")
    est = estimate_sigma_field(yarr, xarr, rank)
    if floor_tau is None:
        floor_tau = 0.05 * float(np.median(est.sigma_xx))
    if not floor_tau > 0.0:
        raise DegenerateDenominator(
            f"denominator floor must be positive, got {floor_tau}; pass floor_tau explicitly"
        )
    slopes = est.sigma_yx / np.maximum(est.sigma_xx, floor_tau)
    return float((w * slopes).mean())


def twgfe_beta_w(y, x, options: TwgfeOptions, weights, stream: np.random.Generator) -> float:
    """Mass-weighted average of within-cell slopes after discretization.

    Units and periods are clustered exactly as in the two-way grouped
    estimator; each surviving cell contributes its OLS-with-intercept slope,
    weighted by the total observation weight falling in the cell. Cells with
    fewer than two observations or no regressor variation are dropped and
    the remaining mass is renormalized.
    """
    yarr = _panel_array(y, "Y")
    xarr = _panel_array(x, "X")
    if yarr.shape != xarr.shape:
        raise DimensionMismatch(f"Y shape {yarr.shape} differs from X shape {xarr.shape}")
    w = _check_weights(weights, yarr.shape)
    n, T = yarr.shape
    if options.n_unit_groups > n or options.n_period_groups > T:
        raise ValueError("group counts exceed panel shape")
    g, c = _twgfe_labels(yarr, xarr, options, stream)
    total_mass = 0.0
    acc = 0.0
    for gg in range(options.n_unit_groups):
        row_mask = g == gg
        for cc in range(options.n_period_groups):
            col_mask = c == cc
            cell_x = xarr[np.ix_(row_mask, col_mask)].ravel()
            if cell_x.size < 2:
                continue
            cell_y = yarr[np.ix_(row_mask, col_mask)].ravel()
            xc = cell_x - cell_x.mean()
            sxx = float(np.vdot(xc, xc))
            if not sxx > 1e-12 * max(float(np.vdot(cell_x, cell_x)), 1e-300):
                continue
            slope = float(np.vdot(cell_y - cell_y.mean(), xc) / sxx)
            mass = float(w[np.ix_(row_mask, col_mask)].sum())
            acc += mass * slope
            total_mass += mass
    if total_mass <= 0.0:
        raise AllCellsDegenerate("no cell supports a within-cell slope with positive mass")
    return acc / total_mass


def _as_fields(v_field, beta_field=None) -> tuple[np.ndarray, np.ndarray | None]:
    v = np.asarray(v_field, dtype=np.float64)
    if v.ndim != 4 or v.shape[2] != v.shape[3]:
        raise DimensionMismatch(f"V field must have shape (n, T, K, K), got {v.shape}")
    if not np.allclose(v, np.swapaxes(v, 2, 3), atol=1e-10, rtol=0.0):
        raise DimensionMismatch("every V_it must be symmetric")
    b = None
    if beta_field is not None:
        b = np.asarray(beta_field, dtype=np.float64)
        if b.shape != v.shape[:3]:
            raise DimensionMismatch(f"beta field shape {b.shape} must be {v.shape[:3]}")
    return v, b


def _mean_matrix_inverse(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mbar = v.mean(axis=(0, 1))
    eig = np.linalg.eigvalsh(mbar)
    if eig[0] <= 0.0 or eig[-1] >= COND_LIMIT * eig[0]:
        raise SingularMeanMatrix("averaged moment matrix is singular or ill-conditioned")
    return mbar, np.linalg.inv(mbar)


def beta_star_multi_oracle(v_field, beta_field) -> np.ndarray:
    """Population-style weighted slope vector inv(mean V) @ mean(V beta).

    For K = 1 this reduces to the ratio of summed conditional covariances
    to summed conditional variances.
    """
    v, b = _as_fields(v_field, beta_field)
    mbar, mbar_inv = _mean_matrix_inverse(v)
    vb = np.einsum("itkj,itj->itk", v, b).mean(axis=(0, 1))
    return mbar_inv @ vb


def contamination_weights(v_field) -> ContaminationWeights:
    """Per-observation loading matrices inv(mean V) @ V_it."""
    v, _ = _as_fields(v_field)
    mbar, mbar_inv = _mean_matrix_inverse(v)
    lam = np.einsum("kj,itjl->itkl", mbar_inv, v)
    return ContaminationWeights(lam=lam, mean_matrix=mbar)
