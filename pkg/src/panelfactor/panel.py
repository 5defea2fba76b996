"""Panel containers, deterministic seed streams, and CSV round-tripping.

A panel is an n x T matrix of float64 values (units in rows, periods in
columns). Matrices are validated once at construction and frozen; all
downstream numerics work on the read-only ``values`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteEntry


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(values, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PanelMatrix:
    """Immutable n x T panel of finite float64 entries."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch(f"panel must be 2-D with n, T >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteEntry(f"non-finite entry at (i={bad[0]}, t={bad[1]})")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def entry(self, i: int, t: int) -> float:
        return float(self.values[i, t])


def panel_from_rows(n: int, T: int, rows: Sequence[Sequence[float]]) -> PanelMatrix:
    """Build a validated PanelMatrix from per-unit rows.

    Raises DimensionMismatch when the row count or any row length differs
    from (n, T), NonFiniteEntry when a cell is NaN or infinite.
    """
    if len(rows) != n:
        raise DimensionMismatch(f"expected {n} rows, got {len(rows)}")
    for i, row in enumerate(rows):
        if len(row) != T:
            raise DimensionMismatch(f"row {i} has length {len(row)}, expected {T}")
    arr = np.asarray([[float(v) for v in row] for row in rows], dtype=np.float64)
    return PanelMatrix(arr)


@dataclass(frozen=True)
class PanelDataset:
    """A response panel plus one or more regressor panels.

    ``latents`` and ``oracle`` are populated by the simulators; observational
    datasets leave them as None. ``meta`` carries free-form provenance such
    as probability limits of misspecified estimators.
    """

    y: PanelMatrix
    x: tuple[PanelMatrix, ...]
    latents: Any = None
    oracle: Any = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x) < 1:
            raise DimensionMismatch("dataset needs at least one regressor panel")
        for k, xk in enumerate(self.x):
            if xk.shape != self.y.shape:
                raise DimensionMismatch(
                    f"regressor {k} has shape {xk.shape}, response has {self.y.shape}"
                )

    @property
    def n(self) -> int:
        return self.y.n

    @property
    def T(self) -> int:
        return self.y.T


_MAX_SEED = 2**64


@dataclass(frozen=True)
class SeedSpec:
    """Master seed from which all replication streams are derived.

    Child streams are a pure function of (master_seed, replication, lane):
    no draw order or worker scheduling can change them. Lane 0 feeds the
    simulator; higher lanes are reserved for estimators that need their own
    randomness inside the same replication.
    """

    master_seed: int

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < _MAX_SEED):
            raise ValueError(f"master_seed must be in [0, 2**64), got {self.master_seed}")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def stream(self, replication: int, lane: int = 0) -> np.random.Generator:
        if replication < 0:
            raise ValueError(f"replication must be >= 0, got {replication}")
        if lane < 0:
            raise ValueError(f"lane must be >= 0, got {lane}")
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(replication, lane))
        return np.random.Generator(np.random.PCG64(seq))


def derive_stream(seed: SeedSpec, replication: int) -> np.random.Generator:
    """Deterministic child stream for one replication of a design."""
    return seed.stream(replication)


def _format_float(v: float) -> str:
    # repr of a Python float is the shortest decimal string that round-trips.
    return repr(float(v))


def write_panel_csv(panel: PanelMatrix, path) -> None:
    """Write ``n,T`` header plus one comma-separated row per unit."""
    lines = [f"{panel.n},{panel.T}"]
    for i in range(panel.n):
        lines.append(",".join(_format_float(v) for v in panel.values[i]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_panel_csv(path) -> PanelMatrix:
    """Parse a panel written by :func:`write_panel_csv` (bit-faithful)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            n_str, t_str = header.split(",")
            n, T = int(n_str), int(t_str)
        except ValueError as exc:
            raise ValueError(f"malformed panel header {header!r} in {path}") from exc
        rows = []
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    return panel_from_rows(n, T, rows)
