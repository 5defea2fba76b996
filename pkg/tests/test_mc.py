"""Monte Carlo harness: determinism, failure accounting, summaries, files."""
import math

import numpy as np
import pytest

from panelfactor import (
    CounterexampleSpec,
    ESTIMATOR_TAGS,
    McCellConfig,
    SUMMARY_COLUMNS,
    SeedSpec,
    TwgfeOptions,
    UnknownEstimatorTag,
    beta_star_analytic,
    build_table_cells,
    dgp_preset,
    export_histogram,
    rank_rule,
    read_mc_summary_csv,
    resolve_rank,
    run_cell,
    run_cell_draws,
    run_table,
    summarize,
    write_histogram_file,
    write_mc_summary_csv,
)


def _small_cell(**kw):
    base = dict(
        dgp=dgp_preset(1, 12, 12, 0.0),
        estimators=("IFE", "PC_X", "CCE"),
        replications=6,
        seed=SeedSpec(99),
    )
    base.update(kw)
    return McCellConfig(**base)


# ------------------------------------------------------------ validation


def test_config_validation():
    with pytest.raises(UnknownEstimatorTag):
        _small_cell(estimators=("OLS",))
    with pytest.raises(ValueError):
        _small_cell(estimators=())
    with pytest.raises(ValueError):
        _small_cell(estimators=("TWGFE",))
    with pytest.raises(ValueError):
        _small_cell(replications=0)
    with pytest.raises(ValueError):
        _small_cell(estimand="plim")
    with pytest.raises(ValueError):
        _small_cell(rank=-1)
    assert set(("IFE", "PC_X", "PC_YX", "CCE", "TWFE", "TWGFE")) == set(ESTIMATOR_TAGS)


def test_resolve_rank():
    assert resolve_rank(_small_cell(rank=4)) == 4
    assert resolve_rank(_small_cell()) == rank_rule(12, 12)
    assert resolve_rank(_small_cell(rank=0)) == 0


# ----------------------------------------------------------- determinism


def test_draws_deterministic_across_calls():
    cfg = _small_cell()
    a = run_cell_draws(cfg)
    b = run_cell_draws(cfg)
    for tag in cfg.estimators:
        assert np.array_equal(a.estimates[tag], b.estimates[tag], equal_nan=True)
    assert np.array_equal(a.beta_star_nt, b.beta_star_nt)


def test_draws_invariant_to_worker_count():
    cfg = _small_cell(
        estimators=("IFE", "PC_X", "PC_YX", "CCE", "TWFE", "TWGFE"),
        twgfe_options=TwgfeOptions(2, 2),
    )
    serial = run_cell_draws(cfg, workers=None)
    pooled = run_cell_draws(cfg, workers=3)
    for tag in cfg.estimators:
        assert np.array_equal(serial.estimates[tag], pooled.estimates[tag], equal_nan=True)
    assert serial.failure_reasons == pooled.failure_reasons
    assert np.array_equal(serial.beta_star_nt, pooled.beta_star_nt)


def test_randomized_estimator_has_isolated_stream():
    with_twgfe = run_cell_draws(
        _small_cell(estimators=("CCE", "TWGFE"), twgfe_options=TwgfeOptions(2, 2))
    )
    without = run_cell_draws(_small_cell(estimators=("CCE",)))
    assert np.array_equal(with_twgfe.estimates["CCE"], without.estimates["CCE"])


def test_replications_vary():
    draws = run_cell_draws(_small_cell(estimators=("TWFE",)))
    assert np.unique(draws.estimates["TWFE"]).size == 6


# ---------------------------------------------------- failure accounting


def test_persistent_failure_is_recorded_not_raised():
    cfg = _small_cell(estimators=("PC_X", "TWFE"), rank=12, replications=4)
    draws = run_cell_draws(cfg)
    assert np.isnan(draws.estimates["PC_X"]).all()
    assert np.isfinite(draws.estimates["TWFE"]).all()
    assert draws.failure_reasons["PC_X"] == {"DegenerateDenominator": 4}
    assert draws.failure_reasons["TWFE"] == {}
    s = summarize(draws)
    assert s.by_tag("PC_X").m_effective == 0
    assert math.isnan(s.by_tag("PC_X").bias)
    assert s.by_tag("PC_X").failure_count == 4
    assert s.by_tag("TWFE").m_effective == 4


# -------------------------------------------------------- normalization


def test_cell_draws_normalization():
    cfg = _small_cell(estimators=("TWFE",), dgp=dgp_preset(3, 30, 12, 0.5))
    draws = run_cell_draws(cfg)
    assert draws.sqrt_min_nt == pytest.approx(math.sqrt(12.0))
    closed = beta_star_analytic(cfg.dgp)
    assert draws.beta_star_closed_form == pytest.approx(closed)
    assert np.all(draws.centers("paper") == draws.beta_star_closed_form)
    assert np.array_equal(draws.centers("oracle"), draws.beta_star_nt)
    manual = math.sqrt(12.0) * (draws.estimates["TWFE"] - closed)
    assert np.allclose(draws.normalized("TWFE", "paper"), manual, atol=1e-12)
    with pytest.raises(UnknownEstimatorTag):
        draws.normalized("IFE")


def test_summarize_matches_manual_moments():
    draws = run_cell_draws(_small_cell(estimators=("TWFE", "CCE")))
    s = summarize(draws)
    for tag in ("TWFE", "CCE"):
        normed = draws.normalized(tag)
        kept = normed[np.isfinite(normed)]
        assert s.by_tag(tag).bias == pytest.approx(float(kept.mean()), rel=1e-12)
        assert s.by_tag(tag).variance == pytest.approx(float(kept.var()), rel=1e-12)
        assert s.by_tag(tag).m_effective == kept.size
    with pytest.raises(UnknownEstimatorTag):
        s.by_tag("IFE")


def test_summarize_estimand_override():
    draws = run_cell_draws(_small_cell(estimators=("TWFE",)))
    paper = summarize(draws)
    oracle = summarize(draws, "oracle")
    assert paper.estimand == "paper"
    assert oracle.estimand == "oracle"
    assert paper.beta_star_value == draws.beta_star_closed_form
    assert oracle.beta_star_value == pytest.approx(float(draws.beta_star_nt.mean()))
    manual = draws.normalized("TWFE", "oracle")
    assert oracle.by_tag("TWFE").bias == pytest.approx(float(manual.mean()), rel=1e-12)


def test_counterexample_cell_metadata():
    cfg = McCellConfig(
        dgp=CounterexampleSpec(14, 10),
        estimators=("TWFE",),
        replications=3,
        seed=SeedSpec(5),
    )
    draws = run_cell_draws(cfg)
    assert draws.beta_star_closed_form == 0.0
    assert np.all(draws.beta_star_nt == 0.0)
    s = summarize(draws)
    assert s.dgp_label == "counterexample"
    assert s.location_family is None and s.pi is None
    assert s.kappa is None and s.rho is None


def test_run_cell_equals_summarized_draws():
    cfg = _small_cell(estimators=("PC_X",))
    assert run_cell(cfg).by_tag("PC_X").bias == pytest.approx(
        summarize(run_cell_draws(cfg)).by_tag("PC_X").bias, rel=1e-15
    )


def test_single_replication_has_zero_variance():
    s = run_cell(_small_cell(estimators=("TWFE",), replications=1))
    assert s.by_tag("TWFE").variance == 0.0
    assert s.by_tag("TWFE").m_effective == 1


def test_unnormalized_error_is_bias_over_scale():
    cfg = _small_cell(estimators=("TWFE",))
    draws = run_cell_draws(cfg)
    s = summarize(draws)
    raw = draws.estimates["TWFE"] - draws.centers()
    assert float(raw.mean()) == pytest.approx(
        s.by_tag("TWFE").bias / draws.sqrt_min_nt, abs=1e-12
    )


def test_run_table_empty_and_seed_sensitivity():
    assert run_table([]) == []
    a, b = run_table([_small_cell(estimators=("TWFE",)), _small_cell(estimators=("TWFE",), seed=SeedSpec(100))])
    assert a.by_tag("TWFE").bias != b.by_tag("TWFE").bias
    assert a.seed == 99 and b.seed == 100


def test_run_table_preserves_order():
    cells = [
        _small_cell(estimators=("TWFE",), dgp=dgp_preset(1, 12, 12, 0.0)),
        _small_cell(estimators=("TWFE",), dgp=dgp_preset(1, 14, 14, 0.5)),
    ]
    out = run_table(cells)
    assert [s.n for s in out] == [12, 14]
    assert [s.pi for s in out] == [0.0, 0.5]


# -------------------------------------------------------------- exports


def test_export_histogram_drops_failures_and_matches_bias():
    cfg = _small_cell(estimators=("CCE",), replications=8)
    hist = export_histogram(cfg, "CCE")
    assert np.isfinite(hist).all()
    s = run_cell(cfg)
    assert float(hist.mean()) == pytest.approx(s.by_tag("CCE").bias, rel=1e-12)
    assert hist.size == s.by_tag("CCE").m_effective
    with pytest.raises(UnknownEstimatorTag):
        export_histogram(cfg, "IFE")


def test_export_histogram_empty_when_all_fail():
    cfg = _small_cell(estimators=("PC_X",), rank=12, replications=3)
    assert export_histogram(cfg, "PC_X").size == 0


def test_build_table_cells_grid():
    cells = build_table_cells(3, reps=7, seed=42)
    assert len(cells) == 10
    assert {c.dgp.label for c in cells} == {"3"}
    assert {(c.n, c.T) for c in cells} == {(n, n) for n in (25, 50, 75, 100, 200)}
    assert {c.dgp.pi for c in cells} == {0.0, 0.5}
    for c in cells:
        assert c.estimators == ("IFE", "PC_YX", "PC_X", "CCE")
        assert c.replications == 7
        assert c.seed.master_seed == 42
        assert c.estimand == "paper"


# ------------------------------------------------------------- file I/O


def test_summary_csv_round_trip(tmp_path):
    cells = [
        _small_cell(estimators=("TWFE", "CCE")),
        McCellConfig(
            dgp=CounterexampleSpec(12, 10),
            estimators=("TWFE",),
            replications=3,
            seed=SeedSpec(7),
        ),
    ]
    summaries = run_table(cells)
    path = tmp_path / "summary.csv"
    write_mc_summary_csv(path, summaries)
    text = path.read_text(encoding="ascii")
    assert text.startswith(",".join(SUMMARY_COLUMNS) + "\n")
    rows = read_mc_summary_csv(path)
    assert len(rows) == 3
    assert rows[0]["estimator"] == "TWFE"
    assert rows[0]["bias"] == summaries[0].by_tag("TWFE").bias
    assert rows[0]["var"] == summaries[0].by_tag("TWFE").variance
    assert rows[0]["n"] == 12 and rows[0]["reps"] == 6
    assert rows[2]["dgp"] == "counterexample"
    assert rows[2]["location_family"] is None
    assert rows[2]["pi"] is None and rows[2]["kappa"] is None


def test_summary_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n", encoding="ascii")
    with pytest.raises(ValueError):
        read_mc_summary_csv(path)


def test_summary_csv_identical_across_worker_counts(tmp_path):
    cfg = _small_cell(
        estimators=("IFE", "PC_X", "PC_YX", "CCE", "TWFE", "TWGFE"),
        twgfe_options=TwgfeOptions(2, 2),
        replications=5,
    )
    p1, p2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
    write_mc_summary_csv(p1, [summarize(run_cell_draws(cfg, workers=1))])
    write_mc_summary_csv(p2, [summarize(run_cell_draws(cfg, workers=2))])
    assert p1.read_bytes() == p2.read_bytes()


def test_histogram_file_format(tmp_path):
    cfg = _small_cell(estimators=("TWFE",), replications=5)
    hist = export_histogram(cfg, "TWFE")
    path = tmp_path / "hist.txt"
    write_histogram_file(path, hist, "TWFE", 12, 12, "1", 99)
    lines = path.read_text(encoding="ascii").strip().split("\n")
    assert lines[0] == "# estimator=TWFE n=12 T=12 dgp=1 seed=99"
    assert len(lines) == 1 + hist.size
    assert np.array_equal(np.array([float(v) for v in lines[1:]]), hist)
