"""End-to-end reproduction gates.

Each test is one acceptance criterion, run at its stated tolerance. Checks
print one PASS/FAIL line per target so a failing gate reports every
measured value; the assertion message repeats the failing lines. Reference
values that the implementation does not reproduce are asserted anyway and
allowed to fail: the discrepancies are real properties of this design and
are documented, not patched over.
"""
import math

import numpy as np
import pytest

from panelfactor import (
    CounterexampleSpec,
    IfeOptions,
    McCellConfig,
    PanelMatrix,
    SeedSpec,
    TwgfeOptions,
    ar1_gamma,
    beta_star_multi_oracle,
    beta_star_nT,
    beta_w_estimate,
    contamination_weights,
    dgp_preset,
    export_histogram,
    ife_als,
    partialled_ols,
    pooled_ols,
    rank_rule,
    read_mc_summary_csv,
    run_cell_draws,
    simulate,
    summarize,
    truncated_svd,
    twfe,
    twgfe,
    write_mc_summary_csv,
)
from panelfactor.lowrank import _rank_r_approx_array

pytestmark = pytest.mark.acceptance

_SEED = SeedSpec(0)
_TABLE_ESTIMATORS = ("IFE", "PC_X", "PC_YX", "CCE")


def _check(failures, label, value, target, tol):
    ok = abs(value - target) <= tol
    line = f"{'PASS' if ok else 'FAIL'} {label}: measured={value:+.4f} target={target}+-{tol}"
    print(line)
    if not ok:
        failures.append(line)
    return ok


def _flag(failures, label, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} {label}{': ' + detail if detail else ''}"
    print(line)
    if not ok:
        failures.append(line)
    return ok


def _finish(gate, failures):
    print(f"{gate}: {'PASS' if not failures else 'FAIL'}")
    assert not failures, "\n" + "\n".join(failures)


# ---------------------------------------------------------------- gate 1


@pytest.mark.slow
def test_gate_01_noise_driven_shared_factor_row():
    cfg = McCellConfig(
        dgp=dgp_preset(1, 50, 50, 0.0),
        estimators=_TABLE_ESTIMATORS,
        replications=2000,
        seed=_SEED,
        rank=13,
        estimand="paper",
    )
    s = summarize(run_cell_draws(cfg))
    f = []
    _check(f, "IFE bias", s.by_tag("IFE").bias, 0.010, 0.03)
    _check(f, "IFE var", s.by_tag("IFE").variance, 0.011, 0.005)
    _check(f, "PC_X bias", s.by_tag("PC_X").bias, 0.001, 0.03)
    _check(f, "PC_YX bias", s.by_tag("PC_YX").bias, -0.622, 0.05)
    _check(f, "CCE bias", s.by_tag("CCE").bias, 0.003, 0.03)
    _finish("gate 1", f)


# ---------------------------------------------------------------- gate 2


@pytest.mark.slow
def test_gate_02_mixture_row_dual_estimand():
    cfg = McCellConfig(
        dgp=dgp_preset(1, 50, 50, 0.5),
        estimators=_TABLE_ESTIMATORS,
        replications=2000,
        seed=_SEED,
        estimand="paper",
    )
    draws = run_cell_draws(cfg)
    targets = {"IFE": (0.229, 0.06), "PC_X": (0.596, 0.08), "PC_YX": (-0.203, 0.06), "CCE": (0.253, 0.06)}
    mode_ok = {}
    for mode in ("paper", "oracle"):
        s = summarize(draws, mode)
        ok = True
        for tag, (target, tol) in targets.items():
            bias = s.by_tag(tag).bias
            hit = abs(bias - target) <= tol
            print(
                f"{'PASS' if hit else 'FAIL'} {mode} {tag} bias: "
                f"measured={bias:+.4f} target={target}+-{tol}"
            )
            ok = ok and hit
        mode_ok[mode] = ok
    f = []
    _flag(
        f,
        "exactly one estimand mode reproduces all four intervals",
        sum(mode_ok.values()) == 1,
        f"paper={mode_ok['paper']} oracle={mode_ok['oracle']}",
    )
    _finish("gate 2", f)


# ---------------------------------------------------------------- gate 3


@pytest.mark.slow
def test_gate_03_cross_design_stability():
    f = []
    for dgp_id, target in ((2, 0.049), (4, 0.034)):
        cfg = McCellConfig(
            dgp=dgp_preset(dgp_id, 50, 50, 0.0),
            estimators=("IFE",),
            replications=2000,
            seed=_SEED,
            estimand="paper",
        )
        s = summarize(run_cell_draws(cfg))
        _check(f, f"design {dgp_id} IFE bias", s.by_tag("IFE").bias, target, 0.03)
    _finish("gate 3", f)


# ---------------------------------------------------------------- gate 4


@pytest.mark.slow
def test_gate_04_counterexample_limits():
    cfg = McCellConfig(
        dgp=CounterexampleSpec(400, 400),
        estimators=("TWFE", "CCE", "PC_X", "IFE"),
        replications=200,
        seed=_SEED,
    )
    draws = run_cell_draws(cfg)
    means = {}
    for tag in cfg.estimators:
        vals = draws.estimates[tag]
        means[tag] = float(vals[np.isfinite(vals)].mean())
    f = []
    _check(f, "TWFE mean estimate", means["TWFE"], 0.5, 0.05)
    _check(f, "CCE mean estimate", means["CCE"], 0.5, 0.05)
    _check(f, "PC_X mean estimate", means["PC_X"], 0.0, 0.05)
    _check(f, "IFE mean estimate", means["IFE"], 0.0, 0.05)
    print(
        f"note: at the looser one-draw tolerance 0.1 the CCE gap is "
        f"{abs(means['CCE'] - 0.5):.4f} and the TWFE gap is {abs(means['TWFE'] - 0.5):.4f}"
    )
    _finish("gate 4", f)


# ---------------------------------------------------------------- gate 5


@pytest.mark.slow
def test_gate_05_consistency_trend():
    raw_error = {}
    for n in (25, 100):
        cfg = McCellConfig(
            dgp=dgp_preset(3, n, n, 0.0),
            estimators=("IFE", "PC_X"),
            replications=500,
            seed=_SEED,
            estimand="oracle",
        )
        draws = run_cell_draws(cfg)
        for tag in cfg.estimators:
            err = draws.estimates[tag] - draws.beta_star_nt
            raw_error[(tag, n)] = float(err[np.isfinite(err)].mean())
    f = []
    _flag(
        f,
        "IFE mean error shrinks from n=25 to n=100",
        abs(raw_error[("IFE", 100)]) < abs(raw_error[("IFE", 25)]),
        f"|{raw_error[('IFE', 100)]:+.5f}| < |{raw_error[('IFE', 25)]:+.5f}|",
    )
    _check(f, "PC_X mean error at n=100", raw_error[("PC_X", 100)], 0.0, 0.01)
    _finish("gate 5", f)


# ---------------------------------------------------------------- gate 6


def test_gate_06_estimator_property_suite():
    f = []
    rng = np.random.default_rng(606)

    a = rng.standard_normal((8, 8))
    approx = _rank_r_approx_array(a, 3)
    best = float(np.vdot(a - approx, a - approx))
    worst = math.inf
    for _ in range(100):
        cand = rng.standard_normal((8, 3)) @ rng.standard_normal((3, 8))
        scale = float(np.vdot(cand, a) / np.vdot(cand, cand))
        resid = a - scale * cand
        worst = min(worst, float(np.vdot(resid, resid)))
    _flag(f, "best rank-3 approximation beats 100 competitors", best <= worst + 1e-12)

    fac = truncated_svd(PanelMatrix(a), 3)
    _flag(
        f,
        "factor orthonormality",
        np.allclose(fac.left.T @ fac.left, np.eye(3), atol=1e-10)
        and np.allclose(fac.right.T @ fac.right, np.eye(3), atol=1e-10),
    )
    total = float(np.vdot(a, a))
    kept = float(np.sum(fac.singular_values**2))
    _flag(f, "energy split (Pythagoras)", abs(total - kept - best) <= 1e-9 * total)
    _flag(
        f,
        "idempotence",
        np.allclose(_rank_r_approx_array(approx, 3), approx, atol=1e-10),
    )

    x = rng.standard_normal((9, 7))
    xd = x - x.mean(axis=1, keepdims=True) - x.mean(axis=0, keepdims=True) + x.mean()
    tol = 1e-9 * np.linalg.norm(x)
    _flag(
        f,
        "two-way demeaned margins vanish",
        float(np.abs(xd.sum(axis=0)).max()) <= tol and float(np.abs(xd.sum(axis=1)).max()) <= tol,
    )

    fwl_ok = True
    for _ in range(100):
        xm = rng.standard_normal((5, 10))
        c1, c2 = rng.standard_normal((5, 10)), rng.standard_normal((5, 10))
        ym = 0.8 * xm - 1.2 * c1 + 0.4 * c2 + rng.standard_normal((5, 10))
        design = np.column_stack([np.ones(50), xm.ravel(), c1.ravel(), c2.ravel()])
        expect = np.linalg.lstsq(design, ym.ravel(), rcond=None)[0][1]
        got = partialled_ols(PanelMatrix(ym), PanelMatrix(xm), [PanelMatrix(c1), PanelMatrix(c2)]).beta[0]
        fwl_ok = fwl_ok and abs(got - expect) <= 1e-10
    _flag(f, "partialled slope equals long regression (100 instances)", fwl_ok)

    rng2 = np.random.default_rng(39)
    x8 = rng2.standard_normal((8, 8))
    y8 = (
        0.7 * x8
        + 1.5 * np.outer(rng2.standard_normal(8), rng2.standard_normal(8))
        + 0.3 * rng2.standard_normal((8, 8))
    )
    res = ife_als(PanelMatrix(y8), [PanelMatrix(x8)], 2)
    path = res.objective_path
    _flag(
        f,
        "alternating objective is non-increasing",
        all(b <= prev + 1e-12 * path[0] for prev, b in zip(path, path[1:])),
    )
    grid = np.arange(-10.0, 10.0 + 1e-9, 1e-3)

    def profile(b):
        resid = y8 - b * x8
        fit = resid - _rank_r_approx_array(resid, 2)
        return float(np.vdot(fit, fit))

    bgrid = grid[int(np.argmin([profile(b) for b in grid]))]
    _check(f, "alternating solution vs grid search", res.beta[0], float(bgrid), 1e-3)

    yg, xg = rng.standard_normal((8, 7)), rng.standard_normal((8, 7))
    b_g = twgfe(PanelMatrix(yg), PanelMatrix(xg), TwgfeOptions(1, 1), SeedSpec(1).stream(0)).beta[0]
    b_f = twfe(PanelMatrix(yg), PanelMatrix(xg)).beta[0]
    _flag(f, "single-group discretization equals two-way demeaning", b_g == b_f)

    expected = {25: 10, 50: 13, 75: 15, 100: 16, 200: 21}
    _flag(
        f,
        "rank rule values",
        all(rank_rule(n, n) == r for n, r in expected.items()),
        str({n: rank_rule(n, n) for n in expected}),
    )
    _finish("gate 6", f)


# ---------------------------------------------------------------- gate 7


@pytest.mark.slow
def test_gate_07_dgp_moment_suite():
    f = []
    draws = ar1_gamma(1_000_000, 0.5, 500, _SEED.stream(0))
    _flag(
        f,
        "AR(1)-Gamma stationary mean in [0.99, 1.01]",
        0.99 <= draws.mean() <= 1.01,
        f"mean={draws.mean():.5f}",
    )
    _flag(
        f,
        "AR(1)-Gamma stationary variance in [0.97, 1.03]",
        0.97 <= draws.var() <= 1.03,
        f"var={draws.var():.5f}",
    )

    ds = simulate(dgp_preset(3, 60, 40, 0.5), _SEED.stream(1))
    w = ds.oracle.weights_nT
    _flag(
        f,
        "conditional-variance weights non-negative and sum to one",
        (w >= 0.0).all() and abs(float(w.sum()) - 1.0) <= 1e-10,
    )
    gap = np.abs(ds.oracle.beta_it * ds.oracle.var_x_cond - ds.oracle.cov_yx_cond)
    scale = np.abs(ds.oracle.cov_yx_cond).max() + 1.0
    _flag(
        f,
        "slope-field algebraic identity at 1e-12",
        float(gap.max()) <= 1e-12 * scale,
        f"max gap={float(gap.max()):.2e}",
    )

    big = simulate(dgp_preset(1, 2000, 2000, 0.0), SeedSpec(9).stream(0))
    _check(f, "finite-panel estimand at n=T=2000", beta_star_nT(big), 0.5, 0.02)
    _finish("gate 7", f)


# ---------------------------------------------------------------- gate 8


def test_gate_08_targeted_effects_suite():
    f = []
    rng = np.random.default_rng(808)
    n, T, K = 8, 6, 3
    base = rng.standard_normal((n, T, K, K))
    v = np.einsum("itkj,itlj->itkl", base, base) + 0.5 * np.eye(K)
    cw = contamination_weights(v)
    lbar = cw.lam.mean(axis=(0, 1))
    _flag(
        f,
        "contamination diagonal averages to one at 1e-10",
        float(np.abs(np.diag(lbar) - 1.0).max()) <= 1e-10,
    )
    off = lbar - np.diag(np.diag(lbar))
    _flag(
        f,
        "contamination off-diagonals average to zero at 1e-10",
        float(np.abs(off).max()) <= 1e-10,
    )

    beta = rng.standard_normal((n, T, K))
    direct = beta_star_multi_oracle(v, beta)
    via_lam = np.einsum("itkl,itl->itk", cw.lam, beta).mean(axis=(0, 1))
    _flag(
        f,
        "weighted estimand decomposes through loadings at 1e-10",
        float(np.abs(direct - via_lam).max()) <= 1e-10,
    )

    diag_entries = 0.5 + rng.random((n, T, K))
    vd = np.zeros((n, T, K, K))
    idx = np.arange(K)
    vd[:, :, idx, idx] = diag_entries
    cwd = contamination_weights(vd)
    off_mask = ~np.eye(K, dtype=bool)
    _flag(
        f,
        "diagonal moment matrices induce no cross loading",
        float(np.abs(cwd.lam[:, :, off_mask]).max()) == 0.0,
    )
    bd = rng.standard_normal((n, T, K))
    per_component = (diag_entries * bd).mean(axis=(0, 1)) / diag_entries.mean(axis=(0, 1))
    _flag(
        f,
        "diagonal case reduces to per-component ratios",
        float(np.abs(beta_star_multi_oracle(vd, bd) - per_component).max()) <= 1e-10,
    )

    rng2 = np.random.default_rng(101)
    vals = []
    for _ in range(50):
        x = rng2.standard_normal((200, 200))
        y = 2.0 * x + 0.5 * rng2.standard_normal((200, 200))
        vals.append(beta_w_estimate(y, x, 1, np.ones((200, 200))))
    _check(f, "homogeneous-effect recovery (mean of 50 draws)", float(np.mean(vals)), 2.0, 0.1)
    _finish("gate 8", f)


# ---------------------------------------------------------------- gate 9


@pytest.mark.slow
def test_gate_09_worker_count_determinism(tmp_path):
    cfg = McCellConfig(
        dgp=dgp_preset(1, 25, 25, 0.5),
        estimators=("IFE", "PC_X", "PC_YX", "CCE", "TWFE", "TWGFE"),
        replications=16,
        seed=_SEED,
        twgfe_options=TwgfeOptions(3, 3),
    )
    p1, p8 = tmp_path / "w1.csv", tmp_path / "w8.csv"
    write_mc_summary_csv(p1, [summarize(run_cell_draws(cfg, workers=1))])
    write_mc_summary_csv(p8, [summarize(run_cell_draws(cfg, workers=8))])
    f = []
    _flag(f, "summary CSVs byte-identical at 1 and 8 workers", p1.read_bytes() == p8.read_bytes())
    _finish("gate 9", f)


# ------------------------------------------------- tabulated-value probes


@pytest.mark.slow
def test_histogram_example_nonlinear_mixture_cell():
    cfg = McCellConfig(
        dgp=dgp_preset(4, 50, 50, 0.5),
        estimators=("IFE",),
        replications=2000,
        seed=_SEED,
        estimand="paper",
    )
    draws = export_histogram(cfg, "IFE")
    f = []
    _check(f, "normalized draw mean", float(draws.mean()), 0.257, 0.05)
    _finish("histogram example", f)


@pytest.mark.slow
def test_cli_table_example_slope_driven_row(tmp_path):
    from panelfactor.cli import main

    out = tmp_path / "table3.csv"
    rc = main([
        "table", "--table", "3", "--reps", "2000", "--seed", "0",
        "--n-list", "50", "--pi-list", "0.0", "--out", str(out), "--workers", "1",
    ])
    assert rc == 0
    rows = [r for r in read_mc_summary_csv(out) if r["estimator"] == "IFE"]
    assert len(rows) == 1
    f = []
    _check(f, "IFE bias from the command line run", rows[0]["bias"], 0.005, 0.03)
    _finish("command-line table example", f)
