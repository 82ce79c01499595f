"""Independence testing and correlation screening for matrix-variate
data whose samples may themselves be correlated."""

from .covmodel import (
    CovMatrix,
    DataMatrix,
    gen_autocorr,
    gen_banded,
    gen_block,
    gen_equicorr,
    gen_identity,
    gen_sparse_pair,
    read_data_csv,
    sample_matnorm,
    sym_sqrt,
    write_data_csv,
)
from .quadfunc import (
    QuadEstimates,
    RowCov,
    col_sample_corr,
    estimate_Ap,
    estimate_Bn,
    iid_threshold_cov,
    row_sample_cov,
    threshold_cov,
    true_Ap,
    true_Bn,
)
from .indtest import (
    IndTestResult,
    bias_corrected_T,
    dn_psi,
    evd_cdf,
    evd_quantile,
    mc_critical,
    power_boundary,
    run_test,
    test_statistic,
)
from .corrtest import (
    MtcResult,
    PrecisionEstimate,
    bh_threshold,
    clime_column,
    clime_precision,
    corrected_stats,
    default_lambda_grid,
    evaluate,
    naive_stats,
    sandwich_corr,
    sandwich_stats,
    tune_lambda,
)
from .simharness import (
    ExperimentConfig,
    ExperimentReport,
    load_report,
    run_experiment,
    run_mtc,
    run_power,
    run_quadfunc_error,
    run_size,
)

__version__ = "0.1.0"
