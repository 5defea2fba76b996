"""Command line interface.

Subcommands: ``simulate`` (draw one panel to CSV), ``estimate`` (fit one
estimator to panel CSVs), ``table`` (replicate a grid of designs into a
summary CSV), ``hist`` (export one estimator's normalized draws), and
``cell`` (run a single cell described by a key = value config file).

Exit codes: 0 success, 2 usage or malformed input, 3 file I/O failure,
4 numerical degeneracy reported by an estimator.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

from .dgp import beta_star_analytic, beta_star_nT, counterexample_simulate, dgp_preset, simulate, write_latents_csv
from .errors import DimensionMismatch, NonFiniteEntry, PanelFactorError
from .estimators import (
    IfeOptions,
    TwgfeOptions,
    cce_pooled,
    ife_als,
    mean_group,
    pc_x,
    pc_yx,
    pooled_ols,
    rank_rule,
    twfe,
    twgfe,
    within_estimator,
)
from .mc import (
    CounterexampleSpec,
    McCellConfig,
    build_table_cells,
    export_histogram,
    run_cell,
    run_table,
    write_histogram_file,
    write_mc_summary_csv,
)
from .panel import SeedSpec, read_panel_csv, write_panel_csv

_DGP_CHOICES = ("1", "2", "3", "4", "counterexample")
_MULTI_X_ESTIMATORS = {"pooled", "pc_x", "ife"}


def _resolve_workers(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("PANELFACTOR_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"PANELFACTOR_WORKERS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _fmt(v: float) -> str:
    return repr(float(v))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelfactor")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="draw one panel and write Y.csv / X.csv")
    p_sim.add_argument("--dgp", required=True, choices=_DGP_CHOICES)
    p_sim.add_argument("--n", required=True, type=int)
    p_sim.add_argument("--t", required=True, type=int)
    p_sim.add_argument("--pi", type=float, default=0.0)
    p_sim.add_argument("--seed", required=True, type=int)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--emit-latents", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="fit one estimator to panel CSVs")
    p_est.add_argument("--y", required=True)
    p_est.add_argument("--x", required=True, action="append")
    p_est.add_argument(
        "--estimator",
        required=True,
        choices=("pooled", "within", "mean_group", "twfe", "cce", "pc_x", "pc_yx", "ife", "twgfe"),
    )
    p_est.add_argument("--rank", type=int)
    p_est.add_argument("--rank-rule", action="store_true")
    p_est.add_argument("--ife-tol", type=float)
    p_est.add_argument("--twgfe-g", type=int)
    p_est.add_argument("--twgfe-c", type=int)
    p_est.add_argument("--seed", type=int, default=0)
    p_est.set_defaults(func=cmd_estimate)

    p_tab = sub.add_parser("table", help="replicate a design grid into a summary CSV")
    p_tab.add_argument("--table", required=True, type=int, choices=(1, 2, 3, 4))
    p_tab.add_argument("--reps", required=True, type=int)
    p_tab.add_argument("--seed", type=int, default=0)
    p_tab.add_argument("--n-list", type=int, nargs="+", default=[25, 50, 75, 100, 200])
    p_tab.add_argument("--pi-list", type=float, nargs="+", default=[0.0, 0.5])
    p_tab.add_argument("--estimand", choices=("paper", "oracle"), default="paper")
    p_tab.add_argument("--out", default="mc_summary.csv")
    p_tab.add_argument("--workers", type=int)
    p_tab.set_defaults(func=cmd_table)

    p_hist = sub.add_parser("hist", help="export one estimator's normalized draws")
    p_hist.add_argument("--dgp", required=True, choices=_DGP_CHOICES)
    p_hist.add_argument("--pi", type=float, default=0.0)
    p_hist.add_argument("--n", required=True, type=int)
    p_hist.add_argument("--t", required=True, type=int)
    p_hist.add_argument("--estimator", required=True, choices=("IFE", "PC_X", "PC_YX", "CCE", "TWFE"))
    p_hist.add_argument("--reps", required=True, type=int)
    p_hist.add_argument("--seed", required=True, type=int)
    p_hist.add_argument("--out", required=True)
    p_hist.add_argument("--rank", type=int)
    p_hist.add_argument("--estimand", choices=("paper", "oracle"), default="paper")
    p_hist.add_argument("--workers", type=int)
    p_hist.set_defaults(func=cmd_hist)

    p_cell = sub.add_parser("cell", help="run one cell from a key = value config file")
    p_cell.add_argument("--config", required=True)
    p_cell.add_argument("--out", default="mc_summary.csv")
    p_cell.add_argument("--workers", type=int)
    p_cell.set_defaults(func=cmd_cell)

    return parser


def cmd_simulate(args) -> int:
    seed = SeedSpec(args.seed)
    stream = seed.stream(0)
    if args.dgp == "counterexample":
        dataset = counterexample_simulate(args.n, args.t, stream)
        analytic = 0.0
    else:
        spec = dgp_preset(int(args.dgp), args.n, args.t, args.pi)
        dataset = simulate(spec, stream)
        analytic = beta_star_analytic(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    write_panel_csv(dataset.y, os.path.join(args.out_dir, "Y.csv"))
    write_panel_csv(dataset.x[0], os.path.join(args.out_dir, "X.csv"))
    if args.emit_latents:
        write_latents_csv(dataset, os.path.join(args.out_dir, "latents.csv"))
    print(f"beta_star_analytic={_fmt(analytic)}")
    print(f"beta_star_oracle_nT={_fmt(beta_star_nT(dataset))}")
    return 0


def cmd_estimate(args) -> int:
    y = read_panel_csv(args.y)
    xs = [read_panel_csv(p) for p in args.x]
    for k, xk in enumerate(xs):
        if xk.shape != y.shape:
            raise DimensionMismatch(
                f"--x file {args.x[k]} has shape {xk.shape}, --y has {y.shape}"
            )
    tag = args.estimator
    if len(xs) > 1 and tag not in _MULTI_X_ESTIMATORS:
        raise ValueError(f"--estimator {tag} accepts a single --x panel")

    rank = None
    if tag in ("pc_x", "pc_yx", "ife"):
        if args.rank is not None and args.rank_rule:
            raise ValueError("pass either --rank or --rank-rule, not both")
        if args.rank is not None:
            rank = args.rank
        elif args.rank_rule:
            rank = rank_rule(y.n, y.T)
        else:
            raise ValueError(f"--estimator {tag} needs --rank or --rank-rule")

    if tag == "pooled":
        res = pooled_ols(y, xs)
    elif tag == "within":
        res = within_estimator(y, xs[0])
    elif tag == "mean_group":
        res = mean_group(y, xs[0])
    elif tag == "twfe":
        res = twfe(y, xs[0])
    elif tag == "cce":
        res = cce_pooled(y, xs[0])
    elif tag == "pc_x":
        res = pc_x(y, xs, rank)
    elif tag == "pc_yx":
        res = pc_yx(y, xs[0], rank)
    elif tag == "ife":
        opts = IfeOptions(tolerance=args.ife_tol) if args.ife_tol else IfeOptions()
        res = ife_als(y, xs, rank, opts)
    else:  # twgfe
        if args.twgfe_g is None or args.twgfe_c is None:
            raise ValueError("--estimator twgfe needs --twgfe-g and --twgfe-c")
        opts = TwgfeOptions(n_unit_groups=args.twgfe_g, n_period_groups=args.twgfe_c)
        res = twgfe(y, xs[0], opts, SeedSpec(args.seed).stream(0))

    beta_txt = ";".join(_fmt(b) for b in res.beta)
    print(f"{tag},{beta_txt},{res.rank_used},{res.iterations},{_fmt(res.final_objective)}")
    print(f"estimator   : {tag}")
    print(f"beta        : {beta_txt}")
    print(f"rank        : {res.rank_used}")
    print(f"iterations  : {res.iterations}")
    print(f"objective   : {_fmt(res.final_objective)}")
    print(f"denominator : {_fmt(res.denominator)}")
    print(f"converged   : {res.converged}")
    return 0


def cmd_table(args) -> int:
    cells = build_table_cells(
        args.table,
        reps=args.reps,
        seed=args.seed,
        n_list=tuple(args.n_list),
        pi_list=tuple(args.pi_list),
        estimand=args.estimand,
    )
    workers = _resolve_workers(args.workers)
    summaries = run_table(cells, workers=workers)
    write_mc_summary_csv(args.out, summaries)
    for s in summaries:
        parts = " ".join(f"{st.tag}={st.bias:.4f}" for st in s.stats)
        print(f"dgp={s.dgp_label} n={s.n} pi={s.pi} reps={s.replications}: {parts}")
    print(f"wrote {args.out}")
    return 0


def _hist_config(args) -> McCellConfig:
    if args.dgp == "counterexample":
        dgp = CounterexampleSpec(args.n, args.t)
    else:
        dgp = dgp_preset(int(args.dgp), args.n, args.t, args.pi)
    return McCellConfig(
        dgp=dgp,
        estimators=(args.estimator,),
        replications=args.reps,
        seed=SeedSpec(args.seed),
        rank=args.rank,
        estimand=args.estimand,
    )


def cmd_hist(args) -> int:
    cfg = _hist_config(args)
    workers = _resolve_workers(args.workers)
    draws = export_histogram(cfg, args.estimator, workers=workers)
    write_histogram_file(
        args.out, draws, tag=args.estimator, n=args.n, T=args.t,
        dgp_label=args.dgp, seed=args.seed,
    )
    print(f"wrote {args.out} ({draws.size} draws)")
    return 0


_CELL_KEYS_REQUIRED = ("dgp", "n", "t", "reps", "seed")
_CELL_KEYS_OPTIONAL = (
    "pi", "estimators", "rank", "estimand", "twgfe_g", "twgfe_c",
    "ife_tol", "ife_max_iter",
)


@dataclass(frozen=True)
class CliConfig:
    """Flat key = value cell description parsed from a config file."""

    values: dict

    @classmethod
    def parse(cls, text: str) -> "CliConfig":
        known = set(_CELL_KEYS_REQUIRED) | set(_CELL_KEYS_OPTIONAL)
        values: dict = {}
        unknown = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno} is not 'key = value': {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in known:
                unknown.append(key)
                continue
            values[key] = val
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(set(unknown)))}")
        missing = [k for k in _CELL_KEYS_REQUIRED if k not in values]
        if missing:
            raise ValueError(f"missing required config keys: {', '.join(missing)}")
        return cls(values=values)

    def to_cell_config(self) -> McCellConfig:
        v = self.values
        dgp_key = v["dgp"]
        if dgp_key not in _DGP_CHOICES:
            raise ValueError(f"config dgp must be one of {_DGP_CHOICES}, got {dgp_key!r}")
        n, T = int(v["n"]), int(v["t"])
        if dgp_key == "counterexample":
            dgp = CounterexampleSpec(n, T)
        else:
            if "pi" not in v:
                raise ValueError("missing required config keys: pi")
            dgp = dgp_preset(int(dgp_key), n, T, float(v["pi"]))
        tags = tuple(s.strip().upper() for s in v.get("estimators", "IFE,PC_YX,PC_X,CCE").split(","))
        rank_txt = v.get("rank", "rule")
        rank = None if rank_txt == "rule" else int(rank_txt)
        ife_kwargs = {}
        if "ife_tol" in v:
            ife_kwargs["tolerance"] = float(v["ife_tol"])
        if "ife_max_iter" in v:
            ife_kwargs["max_iterations"] = int(v["ife_max_iter"])
        twgfe_options = None
        if "twgfe_g" in v or "twgfe_c" in v:
            if not ("twgfe_g" in v and "twgfe_c" in v):
                raise ValueError("twgfe_g and twgfe_c must be given together")
            twgfe_options = TwgfeOptions(
                n_unit_groups=int(v["twgfe_g"]), n_period_groups=int(v["twgfe_c"])
            )
        return McCellConfig(
            dgp=dgp,
            estimators=tags,
            replications=int(v["reps"]),
            seed=SeedSpec(int(v["seed"])),
            rank=rank,
            estimand=v.get("estimand", "paper"),
            ife_options=IfeOptions(**ife_kwargs),
            twgfe_options=twgfe_options,
        )


def cmd_cell(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = CliConfig.parse(fh.read()).to_cell_config()
    workers = _resolve_workers(args.workers)
    summary = run_cell(cfg, workers=workers)
    write_mc_summary_csv(args.out, [summary])
    for st in summary.stats:
        print(
            f"{st.tag}: bias={st.bias:.6f} var={st.variance:.6f} "
            f"reps_effective={st.m_effective}/{summary.replications}"
        )
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (DimensionMismatch, NonFiniteEntry) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except PanelFactorError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: i/o failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
