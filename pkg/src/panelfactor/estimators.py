"""Point estimators for panels with low-rank interactive heterogeneity.

All estimators share one numerical contract: a condition-number guard of
1e12 on every inverted Gram matrix, a relative energy floor that converts
exactly-cancelled regressor variation into a typed DegenerateDenominator,
and deterministic behavior given the caller's random stream (only the
discretized estimator draws randomness, for its k-means++ restarts).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import (
    CollinearControls,
    DegenerateDenominator,
    DimensionMismatch,
    EmptyCluster,
    RankDeficientAugmentation,
    RankOutOfRange,
    UnitDegenerate,
)
from .lowrank import _rank_r_approx_array
from .panel import PanelMatrix

#: condition-number ceiling for any inverted Gram matrix
COND_LIMIT = 1e12
#: a residualized regressor whose energy falls below this fraction of the
#: raw regressor energy is treated as exact cancellation (amplitude 1e-12,
#: the square root of this floor, mirroring the condition guard)
_REL_ENERGY_FLOOR = 1e-24


@dataclass(frozen=True)
class EstimatorResult:
    """Point estimate plus the diagnostics every estimator can report.

    beta has one entry per regressor. ``denominator`` is the scalar residual
    energy or Gram determinant that was actually inverted and is positive by
    construction. ``final_objective`` is the sum of squared residuals of the
    fitted problem (the alternating objective for the iterative estimator).
    ``objective_path`` and ``factor_component`` (the final low-rank matrix G,
    for which beta solves the normal equations of Y - G on X) are populated
    only by the iterative estimator.
    """

    beta: np.ndarray
    rank_used: int = 0
    iterations: int = 0
    final_objective: float = 0.0
    denominator: float = 0.0
    converged: bool = True
    objective_path: tuple[float, ...] | None = None
    factor_component: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=np.float64)))


@dataclass(frozen=True)
class IfeOptions:
    """Controls for the alternating least squares estimator.

    ``initializations`` overrides the default multi-start (a pooled OLS
    start plus a principal-components start) with explicit starting slope
    vectors.
    """

    tolerance: float = 1e-8
    max_iterations: int = 1000
    initializations: Sequence | None = None

    def __post_init__(self):
        if self.tolerance <= 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class TwgfeOptions:
    """Controls for the two-way grouped estimator."""

    n_unit_groups: int
    n_period_groups: int
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 100
    feature_rule: Literal["means_only", "means_and_second_moments"] = "means_and_second_moments"

    def __post_init__(self):
        if self.n_unit_groups < 1 or self.n_period_groups < 1:
            raise ValueError("group counts must be >= 1")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1:
            raise ValueError("kmeans_restarts and kmeans_max_iter must be >= 1")
        if self.feature_rule not in ("means_only", "means_and_second_moments"):
            raise ValueError(f"unknown feature_rule {self.feature_rule!r}")


def _panel_array(p, name: str) -> np.ndarray:
    arr = p.values if isinstance(p, PanelMatrix) else np.asarray(p, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D panel")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise DimensionMismatch(f"{name} needs n, T >= 2, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def _regressor_arrays(y, xs) -> tuple[np.ndarray, list[np.ndarray]]:
    yarr = _panel_array(y, "Y")
    if isinstance(xs, (PanelMatrix, np.ndarray)):
        xs = [xs]
    xlist = [_panel_array(x, f"X[{k}]") for k, x in enumerate(xs)]
    if not xlist:
        raise DimensionMismatch("need at least one regressor panel")
    for k, xk in enumerate(xlist):
        if xk.shape != yarr.shape:
            raise DimensionMismatch(f"X[{k}] shape {xk.shape} differs from Y shape {yarr.shape}")
    return yarr, xlist


def pooled_ols(y, xs, scale: Sequence[float] | None = None) -> EstimatorResult:
    """OLS of Y on K regressor panels over all (i, t), no intercept.

    ``scale`` optionally supplies per-regressor reference energies (sums of
    squares before residualization) against which zero variation is judged;
    residualizing estimators pass the raw regressor energy here.
    """
    yarr, xlist = _regressor_arrays(y, xs)
    K = len(xlist)
    gram = np.empty((K, K))
    moment = np.empty(K)
    for k in range(K):
        moment[k] = np.vdot(yarr, xlist[k])
        for l in range(k, K):
            gram[k, l] = gram[l, k] = np.vdot(xlist[k], xlist[l])
    refs = list(scale) if scale is not None else [gram[k, k] for k in range(K)]
    if len(refs) != K:
        raise DimensionMismatch(f"scale must have {K} entries, got {len(refs)}")
    for k in range(K):
        if not gram[k, k] > _REL_ENERGY_FLOOR * max(refs[k], 0.0):
            raise DegenerateDenominator(f"regressor {k} has (numerically) zero variation")
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0.0 or eig[-1] >= COND_LIMIT * eig[0]:
        raise DegenerateDenominator("regressor Gram matrix is singular or ill-conditioned")
    beta = np.linalg.solve(gram, moment)
    resid = yarr - sum(beta[k] * xlist[k] for k in range(K))
    denominator = float(gram[0, 0]) if K == 1 else float(np.linalg.det(gram))
    return EstimatorResult(
        beta=beta,
        final_objective=float(np.vdot(resid, resid)),
        denominator=denominator,
    )


def partialled_ols(y, x, controls: Sequence) -> EstimatorResult:
    """Slope on X after partialling an intercept and control panels out.

    By the partialled-regression identity the returned slope equals the X
    coefficient of the long OLS of Y on (1, X, controls).
    """
    yarr, xlist = _regressor_arrays(y, [x] + list(controls))
    xv = xlist[0].ravel()
    yv = yarr.ravel()
    design = np.column_stack([np.ones(xv.size)] + [c.ravel() for c in xlist[1:]])
    full = np.column_stack([design, xv])
    if np.linalg.matrix_rank(full) < full.shape[1]:
        raise CollinearControls("intercept, controls and X are collinear")
    coef, *_ = np.linalg.lstsq(design, xv, rcond=None)
    xres = xv - design @ coef
    denom = float(np.vdot(xres, xres))
    if not denom > _REL_ENERGY_FLOOR * np.vdot(xv, xv):
        raise DegenerateDenominator("X carries no variation beyond the controls")
    beta = float(np.vdot(yv, xres) / denom)
    ycoef, *_ = np.linalg.lstsq(design, yv, rcond=None)
    yres = yv - design @ ycoef
    ssr = yres - beta * xres
    return EstimatorResult(
        beta=np.array([beta]),
        final_objective=float(np.vdot(ssr, ssr)),
        denominator=denom,
    )


def within_estimator(y, x) -> EstimatorResult:
    """Slope after removing unit means from the regressor."""
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    xt = xarr - xarr.mean(axis=1, keepdims=True)
    denom = float(np.vdot(xt, xt))
    if not denom > _REL_ENERGY_FLOOR * np.vdot(xarr, xarr):
        raise DegenerateDenominator("regressor is constant within every unit")
    beta = float(np.vdot(yarr, xt) / denom)
    yt = yarr - yarr.mean(axis=1, keepdims=True)
    resid = yt - beta * xt
    return EstimatorResult(
        beta=np.array([beta]),
        final_objective=float(np.vdot(resid, resid)),
        denominator=denom,
    )


def mean_group(y, x, min_denominator: float = 1e-8) -> EstimatorResult:
    """Average of per-unit time-series slopes (unit-demeaned regressor).

    Every unit must carry at least ``min_denominator`` of demeaned regressor
    energy; the first violating unit is reported in the error.
    """
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    xt = xarr - xarr.mean(axis=1, keepdims=True)
    yt = yarr - yarr.mean(axis=1, keepdims=True)
    denoms = np.einsum("it,it->i", xt, xt)
    for i, d in enumerate(denoms):
        if d < min_denominator:
            raise UnitDegenerate(i)
    slopes = np.einsum("it,it->i", yarr, xt) / denoms
    resid = yt - slopes[:, None] * xt
    return EstimatorResult(
        beta=np.array([float(slopes.mean())]),
        final_objective=float(np.vdot(resid, resid)),
        denominator=float(denoms.min()),
    )


def _grouped_demean(z: np.ndarray, g: np.ndarray, c: np.ndarray, G: int, C: int) -> np.ndarray:
    """Subtract group-by-period and unit-by-cluster means, add back cell means."""
    n, T = z.shape
    counts_g = np.bincount(g, minlength=G).astype(np.float64)
    counts_c = np.bincount(c, minlength=C).astype(np.float64)
    m_gt = np.zeros((G, T))
    np.add.at(m_gt, g, z)
    m_gt /= counts_g[:, None]
    onehot_c = np.zeros((T, C))
    onehot_c[np.arange(T), c] = 1.0
    m_ic = (z @ onehot_c) / counts_c[None, :]
    onehot_g = np.zeros((n, G))
    onehot_g[np.arange(n), g] = 1.0
    m_gc = (onehot_g.T @ z @ onehot_c) / np.outer(counts_g, counts_c)
    return z - m_gt[g] - m_ic[:, c] + m_gc[g][:, c]


def _two_way_grouped_ols(
    yarr: np.ndarray, xarr: np.ndarray, g: np.ndarray, c: np.ndarray, G: int, C: int
) -> EstimatorResult:
    yd = _grouped_demean(yarr, g, c, G, C)
    xd = _grouped_demean(xarr, g, c, G, C)
    denom = float(np.vdot(xd, xd))
    if not denom > _REL_ENERGY_FLOOR * np.vdot(xarr, xarr):
        raise DegenerateDenominator("regressor has no variation after two-way demeaning")
    beta = float(np.vdot(yd, xd) / denom)
    resid = yd - beta * xd
    return EstimatorResult(
        beta=np.array([beta]),
        final_objective=float(np.vdot(resid, resid)),
        denominator=denom,
    )


def twfe(y, x) -> EstimatorResult:
    """Two-way fixed effects: slope after unit and period demeaning."""
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    n, T = yarr.shape
    g = np.zeros(n, dtype=np.intp)
    c = np.zeros(T, dtype=np.intp)
    return _two_way_grouped_ols(yarr, xarr, g, c, 1, 1)


def cce_pooled(y, x) -> EstimatorResult:
    """Pooled slope after projecting out [1, period means of Y, of X].

    The augmentation matrix must have full column rank; exact or near
    collinearity of the cross-sectional averages raises a typed error.
    """
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    T = yarr.shape[1]
    H = np.column_stack([np.ones(T), yarr.mean(axis=0), xarr.mean(axis=0)])
    if T < 3:
        raise RankDeficientAugmentation("need T >= 3 for the [1, Ybar, Xbar] augmentation")
    s = np.linalg.svd(H, compute_uv=False)
    tol = s[0] * max(H.shape) * np.finfo(np.float64).eps
    if s[2] <= tol or s[0] >= COND_LIMIT * s[2]:
        raise RankDeficientAugmentation("cross-sectional averages are collinear with the intercept")
    q, _ = np.linalg.qr(H)
    xp = xarr - (xarr @ q) @ q.T
    yp = yarr - (yarr @ q) @ q.T
    denom = float(np.vdot(xp, xp))
    if not denom > _REL_ENERGY_FLOOR * np.vdot(xarr, xarr):
        raise DegenerateDenominator("regressor lies in the span of the augmentation")
    beta = float(np.vdot(yp, xp) / denom)
    resid = yp - beta * xp
    return EstimatorResult(
        beta=np.array([beta]),
        final_objective=float(np.vdot(resid, resid)),
        denominator=denom,
    )


def pc_x(y, xs, rank: int) -> EstimatorResult:
    """Pooled OLS of Y on regressors stripped of their top-R components."""
    yarr, xlist = _regressor_arrays(y, xs)
    perps = [xk - _rank_r_approx_array(xk, rank) for xk in xlist]
    refs = [float(np.vdot(xk, xk)) for xk in xlist]
    res = pooled_ols(yarr, perps, scale=refs)
    return EstimatorResult(
        beta=res.beta,
        rank_used=rank,
        final_objective=res.final_objective,
        denominator=res.denominator,
    )


def pc_yx(y, x, rank: int) -> EstimatorResult:
    """Slope between independently residualized Y and X at a common rank."""
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    yperp = yarr - _rank_r_approx_array(yarr, rank)
    xperp = xarr - _rank_r_approx_array(xarr, rank)
    res = pooled_ols(yperp, [xperp], scale=[float(np.vdot(xarr, xarr))])
    return EstimatorResult(
        beta=res.beta,
        rank_used=rank,
        final_objective=res.final_objective,
        denominator=res.denominator,
    )


def _ife_default_starts(yarr, xlist, rank) -> list[np.ndarray]:
    starts: list[np.ndarray] = []
    starts.append(pooled_ols(yarr, xlist).beta)
    try:
        starts.append(pc_x(yarr, xlist, rank).beta)
    except (DegenerateDenominator, RankOutOfRange):
        pass
    return starts


def ife_als(y, xs, rank: int, options: IfeOptions | None = None) -> EstimatorResult:
    """Interactive fixed effects by alternating least squares.

    Alternates the best rank-R approximation of Y - X beta with OLS of
    Y - G on X until the relative objective decrease falls below tolerance.
    Non-convergence within the iteration budget is reported through the
    ``converged`` flag, never as an error. With several starting values the
    run with the lowest final objective wins.
    """
    opts = options or IfeOptions()
    yarr, xlist = _regressor_arrays(y, xs)
    max_rank = min(yarr.shape)
    if not (0 <= rank <= max_rank):
        raise RankOutOfRange(f"rank {rank} outside [0, {max_rank}] for shape {yarr.shape}")
    K = len(xlist)
    gram = np.empty((K, K))
    for k in range(K):
        for l in range(k, K):
            gram[k, l] = gram[l, k] = np.vdot(xlist[k], xlist[l])
    eig = np.linalg.eigvalsh(gram)
    if eig[0] <= 0.0 or eig[-1] >= COND_LIMIT * eig[0]:
        raise DegenerateDenominator("regressor Gram matrix is singular or ill-conditioned")
    denominator = float(gram[0, 0]) if K == 1 else float(np.linalg.det(gram))

    if opts.initializations is not None:
        starts = [np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in opts.initializations]
        for b in starts:
            if b.shape != (K,):
                raise DimensionMismatch(f"initialization shape {b.shape} != ({K},)")
        if not starts:
            raise ValueError("initializations must contain at least one starting value")
    else:
        starts = _ife_default_starts(yarr, xlist, rank)

    best: tuple[float, np.ndarray, int, bool, tuple[float, ...], np.ndarray] | None = None
    for beta0 in starts:
        beta = beta0.astype(np.float64).copy()
        prev = None
        path: list[float] = []
        converged = False
        iterations = 0
        gmat = np.zeros_like(yarr)
        for it in range(1, opts.max_iterations + 1):
            resid = yarr - sum(beta[k] * xlist[k] for k in range(K))
            gmat = _rank_r_approx_array(resid, rank)
            target = yarr - gmat
            moment = np.array([np.vdot(target, xlist[k]) for k in range(K)])
            beta = np.linalg.solve(gram, moment)
            fit = target - sum(beta[k] * xlist[k] for k in range(K))
            obj = float(np.vdot(fit, fit))
            path.append(obj)
            iterations = it
            if prev is not None and (prev <= 0.0 or prev - obj < opts.tolerance * prev):
                converged = True
                break
            prev = obj
        final = path[-1]
        if best is None or final < best[0]:
            best = (final, beta, iterations, converged, tuple(path), gmat)

    assert best is not None
    final, beta, iterations, converged, path, gmat = best
    return EstimatorResult(
        beta=beta,
        rank_used=rank,
        iterations=iterations,
        final_objective=final,
        denominator=denominator,
        converged=converged,
        objective_path=path,
        factor_component=gmat,
    )


def _kmeans_pp_centers(feats: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray | None:
    npts = feats.shape[0]
    centers = np.empty((k, feats.shape[1]))
    centers[0] = feats[int(rng.integers(npts))]
    d2 = ((feats - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            return None  # fewer distinct points than requested centers
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
        centers[j] = feats[min(idx, npts - 1)]
        d2 = np.minimum(d2, ((feats - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(feats: np.ndarray, centers: np.ndarray, max_iter: int):
    k = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d.argmin(axis=1)  # argmin breaks ties at the lowest index
        counts = np.bincount(new_labels, minlength=k)
        if (counts == 0).any():
            return None, None
        stable = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        centers = np.zeros_like(centers)
        np.add.at(centers, labels, feats)
        centers /= counts[:, None].astype(np.float64)
        if stable:
            break
    sse = float(((feats - centers[labels]) ** 2).sum())
    return labels, sse


def _kmeans_best(
    feats: np.ndarray, k: int, restarts: int, max_iter: int, rng: np.random.Generator
) -> np.ndarray:
    best_labels = None
    best_sse = math.inf
    for _ in range(restarts):
        centers = _kmeans_pp_centers(feats, k, rng)
        if centers is None:
            continue
        labels, sse = _lloyd(feats, centers, max_iter)
        if labels is None:
            continue
        if sse < best_sse:  # strict: ties keep the earliest restart
            best_labels, best_sse = labels, sse
    if best_labels is None:
        raise EmptyCluster(f"all {restarts} k-means restarts produced an empty cluster")
    return best_labels


def _moment_features(yarr: np.ndarray, xarr: np.ndarray, axis: int, rule: str) -> np.ndarray:
    cols = [yarr.mean(axis=axis), xarr.mean(axis=axis)]
    if rule == "means_and_second_moments":
        cols += [(yarr * yarr).mean(axis=axis), (xarr * xarr).mean(axis=axis), (yarr * xarr).mean(axis=axis)]
    return np.column_stack(cols)


def _twgfe_labels(
    yarr: np.ndarray, xarr: np.ndarray, options: TwgfeOptions, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    unit_feats = _moment_features(yarr, xarr, axis=1, rule=options.feature_rule)
    g = _kmeans_best(unit_feats, options.n_unit_groups, options.kmeans_restarts, options.kmeans_max_iter, rng)
    period_feats = _moment_features(yarr, xarr, axis=0, rule=options.feature_rule)
    c = _kmeans_best(period_feats, options.n_period_groups, options.kmeans_restarts, options.kmeans_max_iter, rng)
    return g, c


def twgfe(y, x, options: TwgfeOptions, stream: np.random.Generator) -> EstimatorResult:
    """Two-way grouped fixed effects.

    Units and periods are discretized by k-means (k-means++ seeded from the
    caller's stream, best of ``kmeans_restarts`` by within-cluster SSE) on
    moment features of (Y, X); the slope comes from pooled OLS after
    group-by-period demeaning. With one unit group and one period group this
    reduces exactly to the two-way fixed effects estimator.
    """
    yarr, xlist = _regressor_arrays(y, [x])
    xarr = xlist[0]
    n, T = yarr.shape
    if options.n_unit_groups > n or options.n_period_groups > T:
        raise ValueError(
            f"group counts ({options.n_unit_groups}, {options.n_period_groups}) exceed panel shape {yarr.shape}"
        )
    g, c = _twgfe_labels(yarr, xarr, options, stream)
    return _two_way_grouped_ols(yarr, xarr, g, c, options.n_unit_groups, options.n_period_groups)


def rank_rule(n: int, T: int) -> int:
    """Default factor-rank cap: min(floor(3 n^(3/8)), min(n, T) - 1)."""
    if n < 2 or T < 2:
        raise DimensionMismatch(f"rank rule needs n, T >= 2, got ({n}, {T})")
    return int(min(math.floor(3.0 * float(n) ** 0.375), min(n, T) - 1))
