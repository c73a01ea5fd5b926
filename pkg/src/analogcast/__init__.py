"""Nonparametric kernel ensemble analog forecasting for low-frequency
patterns in multivariate time series, with autoregressive baselines and
skill evaluation."""

from .dataset import (
    Climatology,
    Dataset,
    LoadError,
    ScalarObservable,
    detrend_monthly,
    fill_where,
    integrated_anomaly,
    integrated_extent,
    load_dataset,
    monthly_climatology,
    monthly_trend,
    save_dataset,
    synth_modulated_field,
    synth_regime_ar,
)
from .embedding import EmbeddedComponent, EmbeddedSeries, embed, join, with_phase_velocities
from .kernels import (
    KernelMatrix,
    KernelSpec,
    build_matrix,
    cross_matrix,
    gaussian,
    median_pairwise_distance,
    median_pairwise_sq_distance,
    multiscale_family,
    nlsa,
    nlsa_multivariate,
    row_normalize,
)
from .laplacian import EigenBasis, decompose, eigs, markov_and_laplacian, mode_diagnostics, normalize
from .ose import (
    GHModel,
    LPModel,
    gh_extend,
    gh_extend_eigenfunction,
    gh_fit,
    lp_extend,
    lp_fit,
)
from .forecast import (
    ForecastRun,
    keaf_gh,
    keaf_lp,
    persistence,
    run_forecasts,
    shift,
    truncate_ensemble,
)
from .baselines import (
    AffiliationForecast,
    ARModel,
    ClusterARModel,
    aic_select,
    ar_forecast,
    estimate_transition_matrix,
    fit_cluster_ar,
    fit_stationary_ar,
    forecast_affiliation_pi,
    forecast_affiliation_realization,
    initial_affiliation,
    potential_predictability,
    predict_affiliation_deterministic,
    predict_affiliation_realization,
)
from .metrics import SkillCurves, horizon, pc_curve, rmse_curve, skill_curves, truth_direct, truth_ose

__version__ = "0.1.0"
