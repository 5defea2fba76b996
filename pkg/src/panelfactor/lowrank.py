"""Truncated singular value decompositions and spectral diagnostics.

These routines wrap LAPACK's dense SVD with a fixed sign convention and
strict rank validation so that every low-rank projection in the package is
reproducible bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankOutOfRange
from .panel import PanelMatrix

#: matrices with min(n, T) at or below this use a full decomposition for the
#: spectral norm; larger ones fall back to power iteration.
_FULL_DECOMP_LIMIT = 512
_POWER_TOL = 1e-10
_POWER_MAX_ITER = 10_000


def _as_array(a) -> np.ndarray:
    if isinstance(a, PanelMatrix):
        return a.values
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise RankOutOfRange(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class LowRankFactors:
    """Rank-R factorization ``left @ diag(singular_values) @ right.T``.

    Columns of ``left`` (n x R) and ``right`` (T x R) are orthonormal; the
    first nonzero entry of each left vector is non-negative so the
    factorization is unique up to ties in the spectrum.
    """

    rank: int
    left: np.ndarray
    right: np.ndarray
    singular_values: np.ndarray

    def reconstruct(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.left.shape[0], self.right.shape[0]))
        return (self.left * self.singular_values) @ self.right.T


@dataclass(frozen=True)
class SpectralDiagnostics:
    """Summary of a matrix spectrum.

    ``tail_energy[R]`` is the squared singular-value mass beyond rank R as a
    fraction of the total, for R = 0 .. min(n, T). A zero matrix reports
    zero tail energy everywhere.
    """

    spectral_norm: float
    frobenius_sq: float
    tail_energy: np.ndarray


def _apply_sign_convention(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = u.copy()
    vt = vt.copy()
    for r in range(u.shape[1]):
        col = u[:, r]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            u[:, r] = -col
            vt[r, :] = -vt[r, :]
    return u, vt


def truncated_svd(a, rank: int) -> LowRankFactors:
    """Best rank-R factorization of a matrix in the Frobenius sense.

    Parameters
    ----------
    a : PanelMatrix or 2-D array
    rank : int
        Must satisfy 0 <= rank <= min(n, T); rank 0 yields empty factors.
    """
    arr = _as_array(a)
    n, T = arr.shape
    max_rank = min(n, T)
    if not (0 <= rank <= max_rank):
        raise RankOutOfRange(f"rank {rank} outside [0, {max_rank}] for shape {arr.shape}")
    if rank == 0:
        return LowRankFactors(
            rank=0,
            left=np.zeros((n, 0)),
            right=np.zeros((T, 0)),
            singular_values=np.zeros(0),
        )
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    u, vt = _apply_sign_convention(u[:, :rank], vt[:rank, :])
    return LowRankFactors(rank=rank, left=u, right=vt.T.copy(), singular_values=s[:rank].copy())


def _rank_r_approx_array(arr: np.ndarray, rank: int) -> np.ndarray:
    n, T = arr.shape
    max_rank = min(n, T)
    if not (0 <= rank <= max_rank):
        raise RankOutOfRange(f"rank {rank} outside [0, {max_rank}] for shape {arr.shape}")
    if rank == 0:
        return np.zeros_like(arr)
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    return (u[:, :rank] * s[:rank]) @ vt[:rank, :]


def rank_r_approx(a, rank: int):
    """Best rank-R approximation; returns the same container kind it was fed."""
    if isinstance(a, PanelMatrix):
        return PanelMatrix(_rank_r_approx_array(a.values, rank))
    return _rank_r_approx_array(_as_array(a), rank)


def spectral_norm(a) -> float:
    """Largest singular value, by full decomposition or power iteration."""
    arr = _as_array(a)
    if min(arr.shape) <= _FULL_DECOMP_LIMIT:
        return float(np.linalg.svd(arr, compute_uv=False)[0])
    # power iteration on A A^T with a fixed deterministic start
    g = arr @ arr.T if arr.shape[0] <= arr.shape[1] else arr.T @ arr
    v = np.ones(g.shape[0]) / np.sqrt(g.shape[0])
    lam = 0.0
    for _ in range(_POWER_MAX_ITER):
        w = g @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - lam) <= _POWER_TOL * max(norm, 1.0):
            lam = norm
            break
        lam = norm
    return float(np.sqrt(lam))


def spectral_diagnostics(a) -> SpectralDiagnostics:
    """Spectral norm, squared Frobenius norm, and the tail-energy profile."""
    arr = _as_array(a)
    s = np.linalg.svd(arr, compute_uv=False)
    s2 = s * s
    total = float(s2.sum())
    tail = np.zeros(s.size + 1)
    if total > 0.0:
        # tail[R] = sum of s2[R:] / total, computed in reverse for stability
        tail[:-1] = np.cumsum(s2[::-1])[::-1] / total
    return SpectralDiagnostics(
        spectral_norm=float(s[0]) if s.size else 0.0,
        frobenius_sq=float(np.vdot(arr, arr)),
        tail_energy=tail,
    )
