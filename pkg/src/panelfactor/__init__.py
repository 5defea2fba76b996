"""Factor-augmented panel regression estimators and simulators."""

from .errors import (
    AllCellsDegenerate,
    CollinearControls,
    DegenerateDenominator,
    DimensionMismatch,
    EmptyCluster,
    InvalidAlpha,
    MissingLatents,
    NegativeWeights,
    NonFiniteEntry,
    PanelFactorError,
    RankDeficientAugmentation,
    RankOutOfRange,
    SingularMeanMatrix,
    UnitDegenerate,
    UnknownEstimatorTag,
)
from .panel import (
    PanelDataset,
    PanelMatrix,
    SeedSpec,
    derive_stream,
    panel_from_rows,
    read_panel_csv,
    write_panel_csv,
)
from .lowrank import (
    LowRankFactors,
    SpectralDiagnostics,
    rank_r_approx,
    spectral_diagnostics,
    spectral_norm,
    truncated_svd,
)
from .estimators import (
    EstimatorResult,
    IfeOptions,
    TwgfeOptions,
    cce_pooled,
    ife_als,
    mean_group,
    partialled_ols,
    pc_x,
    pc_yx,
    pooled_ols,
    rank_rule,
    twfe,
    twgfe,
    within_estimator,
)
from .dgp import (
    CounterexampleDraws,
    DgpSpec,
    LatentDraws,
    OracleFields,
    ar1_gamma,
    beta_star_analytic,
    beta_star_nT,
    counterexample_simulate,
    dgp_preset,
    simulate,
    write_latents_csv,
)
from .targeted import (
    ContaminationWeights,
    SigmaFieldEstimate,
    beta_star_multi_oracle,
    beta_w_estimate,
    contamination_weights,
    estimate_sigma_field,
    twgfe_beta_w,
)
from .mc import (
    ESTIMATOR_TAGS,
    SUMMARY_COLUMNS,
    CellDraws,
    CounterexampleSpec,
    EstimatorCellStats,
    McCellConfig,
    McSummary,
    build_table_cells,
    export_histogram,
    read_mc_summary_csv,
    resolve_rank,
    run_cell,
    run_cell_draws,
    run_table,
    summarize,
    write_histogram_file,
    write_mc_summary_csv,
)

__version__ = "0.1.0"
