"""Monte Carlo harness: replicated cells, summaries, and file formats.

A cell fixes one design and a set of estimators; replications are mapped
over deterministic per-replication streams so results are bit-identical for
any worker count. Per-replication estimator failures are recorded data, not
run-stopping errors, and one estimator's failure never perturbs another's
draws (each randomized estimator consumes its own stream lane).
"""
from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .dgp import (
    DgpSpec,
    beta_star_analytic,
    beta_star_nT,
    counterexample_simulate,
    dgp_preset,
    simulate,
)
from .errors import PanelFactorError, UnknownEstimatorTag
from .estimators import IfeOptions, TwgfeOptions, cce_pooled, ife_als, pc_x, pc_yx, rank_rule, twfe, twgfe
from .panel import SeedSpec

ESTIMATOR_TAGS = ("IFE", "PC_X", "PC_YX", "CCE", "TWFE", "TWGFE")
#: stream lane consumed by the discretized estimator inside a replication
_TWGFE_LANE = 1
#: column layout of the summary CSV, fixed for round-tripping
SUMMARY_COLUMNS = (
    "dgp", "location_family", "n", "T", "pi", "kappa", "rho",
    "estimator", "rank", "reps", "reps_effective", "bias", "var",
    "beta_star_mode", "beta_star_value", "seed",
)


@dataclass(frozen=True)
class CounterexampleSpec:
    """Cell tag selecting the no-signal shared-loading design."""

    n: int
    T: int
    label: str = "counterexample"


@dataclass(frozen=True)
class McCellConfig:
    """One Monte Carlo cell: a design, estimators, and replication count.

    ``rank`` of None resolves through the default rank rule. ``estimand``
    picks the normalization center: "paper" uses the closed-form
    variance-weighted value, "oracle" the per-replication finite-panel one.
    """

    dgp: DgpSpec | CounterexampleSpec
    estimators: tuple[str, ...]
    replications: int
    seed: SeedSpec
    rank: int | None = None
    estimand: str = "paper"
    ife_options: IfeOptions = field(default_factory=IfeOptions)
    twgfe_options: TwgfeOptions | None = None

    def __post_init__(self):
        if not self.estimators:
            raise ValueError("cell needs at least one estimator tag")
        for tag in self.estimators:
            if tag not in ESTIMATOR_TAGS:
                raise UnknownEstimatorTag(f"unknown estimator tag {tag!r}")
        if "TWGFE" in self.estimators and self.twgfe_options is None:
            raise ValueError("TWGFE requires twgfe_options")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.estimand not in ("paper", "oracle"):
            raise ValueError(f"estimand must be 'paper' or 'oracle', got {self.estimand!r}")
        if self.rank is not None and self.rank < 0:
            raise ValueError(f"rank must be >= 0, got {self.rank}")

    @property
    def n(self) -> int:
        return self.dgp.n

    @property
    def T(self) -> int:
        return self.dgp.T


@dataclass(frozen=True)
class EstimatorCellStats:
    """Normalized bias and spread of one estimator within a cell."""

    tag: str
    bias: float
    variance: float
    m_effective: int
    failures: dict

    @property
    def failure_count(self) -> int:
        return sum(self.failures.values())


@dataclass(frozen=True)
class McSummary:
    """Cell-level summary: per-estimator stats plus design metadata."""

    dgp_label: str
    location_family: str | None
    n: int
    T: int
    pi: float | None
    kappa: float | None
    rho: float | None
    rank_used: int
    replications: int
    seed: int
    estimand: str
    beta_star_value: float
    stats: tuple[EstimatorCellStats, ...]

    def by_tag(self, tag: str) -> EstimatorCellStats:
        for s in self.stats:
            if s.tag == tag:
                return s
        raise UnknownEstimatorTag(f"estimator {tag!r} not in this summary")


@dataclass(frozen=True)
class CellDraws:
    """Raw per-replication output of one cell.

    ``estimates[tag]`` holds one slope per replication (NaN where the
    estimator failed); ``beta_star_nt`` the per-replication finite-panel
    estimand. Normalization to either estimand happens in :func:`summarize`.
    """

    config: McCellConfig
    rank_used: int
    estimates: dict
    failure_reasons: dict
    beta_star_nt: np.ndarray
    beta_star_closed_form: float

    @property
    def sqrt_min_nt(self) -> float:
        return math.sqrt(min(self.config.n, self.config.T))

    def centers(self, estimand: str | None = None) -> np.ndarray:
        mode = estimand or self.config.estimand
        if mode == "oracle":
            return self.beta_star_nt
        return np.full(self.config.replications, self.beta_star_closed_form)

    def normalized(self, tag: str, estimand: str | None = None) -> np.ndarray:
        if tag not in self.estimates:
            raise UnknownEstimatorTag(f"estimator {tag!r} not in this cell")
        return self.sqrt_min_nt * (self.estimates[tag] - self.centers(estimand))


def resolve_rank(cfg: McCellConfig) -> int:
    return cfg.rank if cfg.rank is not None else rank_rule(cfg.n, cfg.T)


def _simulate_cell(cfg: McCellConfig, m: int):
    stream = cfg.seed.stream(m, 0)
    if isinstance(cfg.dgp, CounterexampleSpec):
        return counterexample_simulate(cfg.dgp.n, cfg.dgp.T, stream)
    return simulate(cfg.dgp, stream)


def _one_replication(cfg: McCellConfig, rank: int, m: int):
    dataset = _simulate_cell(cfg, m)
    y, x = dataset.y, dataset.x[0]
    out = {}
    for tag in cfg.estimators:
        try:
            if tag == "IFE":
                res = ife_als(y, [x], rank, cfg.ife_options)
            elif tag == "PC_X":
                res = pc_x(y, [x], rank)
            elif tag == "PC_YX":
                res = pc_yx(y, x, rank)
            elif tag == "CCE":
                res = cce_pooled(y, x)
            elif tag == "TWFE":
                res = twfe(y, x)
            else:  # TWGFE
                res = twgfe(y, x, cfg.twgfe_options, cfg.seed.stream(m, _TWGFE_LANE))
            out[tag] = (float(res.beta[0]), None)
        except PanelFactorError as exc:
            out[tag] = (math.nan, type(exc).__name__)
    return out, beta_star_nT(dataset)


def _replicate_task(payload):
    cfg, rank, m = payload
    return m, _one_replication(cfg, rank, m)


def _closed_form_center(cfg: McCellConfig) -> float:
    if isinstance(cfg.dgp, CounterexampleSpec):
        return 0.0
    return beta_star_analytic(cfg.dgp)


def run_cell_draws(cfg: McCellConfig, workers: int | None = None) -> CellDraws:
    """Run every replication of a cell and keep the raw draws.

    ``workers`` > 1 maps replications over a process pool; results are
    reassembled in replication order so the output does not depend on the
    worker count or scheduling.
    """
    rank = resolve_rank(cfg)
    M = cfg.replications
    records: list = [None] * M
    if workers is not None and workers > 1 and M > 1:
        ctx = multiprocessing.get_context("fork")
        chunk = max(1, M // (4 * workers))
        with ctx.Pool(processes=workers) as pool:
            for m, rec in pool.imap(
                _replicate_task, ((cfg, rank, m) for m in range(M)), chunksize=chunk
            ):
                records[m] = rec
    else:
        for m in range(M):
            records[m] = _one_replication(cfg, rank, m)

    estimates = {tag: np.full(M, math.nan) for tag in cfg.estimators}
    reasons: dict = {tag: {} for tag in cfg.estimators}
    bstar_nt = np.empty(M)
    for m, (out, bnt) in enumerate(records):
        bstar_nt[m] = bnt
        for tag in cfg.estimators:
            val, reason = out[tag]
            estimates[tag][m] = val
            if reason is not None:
                reasons[tag][reason] = reasons[tag].get(reason, 0) + 1
    return CellDraws(
        config=cfg,
        rank_used=rank,
        estimates=estimates,
        failure_reasons=reasons,
        beta_star_nt=bstar_nt,
        beta_star_closed_form=_closed_form_center(cfg),
    )


def summarize(draws: CellDraws, estimand: str | None = None) -> McSummary:
    """Reduce raw draws to per-estimator bias and population variance."""
    cfg = draws.config
    mode = estimand or cfg.estimand
    stats = []
    for tag in cfg.estimators:
        normed = draws.normalized(tag, mode)
        ok = np.isfinite(normed)
        kept = normed[ok]
        bias = float(kept.mean()) if kept.size else math.nan
        variance = float(kept.var()) if kept.size else math.nan
        stats.append(
            EstimatorCellStats(
                tag=tag,
                bias=bias,
                variance=variance,
                m_effective=int(ok.sum()),
                failures=dict(draws.failure_reasons[tag]),
            )
        )
    if mode == "oracle":
        beta_star_value = float(draws.beta_star_nt.mean())
    else:
        beta_star_value = draws.beta_star_closed_form
    dgp = cfg.dgp
    if isinstance(dgp, CounterexampleSpec):
        family, pi, kappa, rho = None, None, None, None
    else:
        family, pi, kappa, rho = dgp.location_family, dgp.pi, dgp.kappa, dgp.rho
    return McSummary(
        dgp_label=dgp.label,
        location_family=family,
        n=cfg.n,
        T=cfg.T,
        pi=pi,
        kappa=kappa,
        rho=rho,
        rank_used=draws.rank_used,
        replications=cfg.replications,
        seed=cfg.seed.master_seed,
        estimand=mode,
        beta_star_value=beta_star_value,
        stats=tuple(stats),
    )


def run_cell(cfg: McCellConfig, workers: int | None = None) -> McSummary:
    """Replicate one cell and summarize it under its configured estimand."""
    return summarize(run_cell_draws(cfg, workers=workers))


def run_table(cells, workers: int | None = None) -> list[McSummary]:
    """Run a list of cells in order; parallelism stays within each cell."""
    return [run_cell(cfg, workers=workers) for cfg in cells]


def export_histogram(cfg: McCellConfig, tag: str, workers: int | None = None) -> np.ndarray:
    """Normalized draws of one estimator across a cell's replications.

    Failed replications are omitted, so the sample mean of the returned
    draws equals the cell summary's bias for the same seed.
    """
    if tag not in cfg.estimators:
        raise UnknownEstimatorTag(f"estimator {tag!r} not in cell configuration")
    draws = run_cell_draws(cfg, workers=workers)
    normed = draws.normalized(tag)
    return normed[np.isfinite(normed)]


def build_table_cells(
    table_id: int,
    reps: int,
    seed: int,
    n_list=(25, 50, 75, 100, 200),
    pi_list=(0.0, 0.5),
    estimand: str = "paper",
) -> list[McCellConfig]:
    """Square-panel grid of cells for one numbered design.

    Every cell shares the master seed; cells are distinguished by their
    design parameters, and reusing the seed lets a histogram export
    reproduce any cell's draws exactly.
    """
    cells = []
    for n in n_list:
        for pi in pi_list:
            cells.append(
                McCellConfig(
                    dgp=dgp_preset(table_id, n, n, pi),
                    estimators=("IFE", "PC_YX", "PC_X", "CCE"),
                    replications=reps,
                    seed=SeedSpec(seed),
                    estimand=estimand,
                )
            )
    return cells


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_mc_summary_csv(path, summaries) -> None:
    """One row per (cell, estimator), in the fixed column layout."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summaries:
        for st in s.stats:
            row = {
                "dgp": s.dgp_label,
                "location_family": s.location_family,
                "n": s.n,
                "T": s.T,
                "pi": s.pi,
                "kappa": s.kappa,
                "rho": s.rho,
                "estimator": st.tag,
                "rank": s.rank_used,
                "reps": s.replications,
                "reps_effective": st.m_effective,
                "bias": st.bias,
                "var": st.variance,
                "beta_star_mode": s.estimand,
                "beta_star_value": s.beta_star_value,
                "seed": s.seed,
            }
            lines.append(",".join(_fmt(row[c]) for c in SUMMARY_COLUMNS))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mc_summary_csv(path) -> list[dict]:
    """Parse a summary CSV back into one dict per row (None for blanks)."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != SUMMARY_COLUMNS:
            raise ValueError(f"unexpected summary columns {header}")
        rows = []
        int_cols = {"n", "T", "rank", "reps", "reps_effective", "seed"}
        float_cols = {"pi", "kappa", "rho", "bias", "var", "beta_star_value"}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            vals = line.split(",")
            row: dict = {}
            for col, raw in zip(SUMMARY_COLUMNS, vals):
                if raw == "":
                    row[col] = None
                elif col in int_cols:
                    row[col] = int(raw)
                elif col in float_cols:
                    row[col] = float(raw)
                else:
                    row[col] = raw
            rows.append(row)
    return rows


def write_histogram_file(path, draws, tag: str, n: int, T: int, dgp_label: str, seed: int) -> None:
    """Header comment line plus one normalized draw per line."""
    lines = [f"# estimator={tag} n={n} T={T} dgp={dgp_label} seed={seed}"]
    lines += [repr(float(v)) for v in draws]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
