"""Pricing, calibration and hedge analysis for index-based longevity
derivatives under a two-factor Gaussian mortality-intensity model."""

from .model import (
    REAL_WORLD,
    CohortState,
    GaussianIntegralMoments,
    ImplausibleSurvivalWarning,
    MarketParams,
    Measure,
    ModelParams,
    effective_drift2,
    integral_moments,
    survival_probability,
)
from .price import (
    CapSpec,
    CapletSpec,
    SForwardSpec,
    SwapSpec,
    ValuationContext,
    annuity_price,
    cap_price,
    caplet_price,
    discount,
    floorlet_price,
    sforward_price,
    sforward_rate,
    swap_value,
)
from .calibrate import (
    CalibrationError,
    DriftFit,
    MortalityTable,
    SurvivalCurve,
    VolatilityFit,
    calibrate_lambda,
    delta_m,
    empirical_survival_curve,
    fit_drift,
    fit_volatility,
    longevity_bond_price,
    model_variance_delta_mu,
    read_mortality_csv,
    sample_variance_delta_m,
    synthetic_table,
    write_mortality_csv,
)
from .sim import (
    PathSample,
    RngSpec,
    mc_caplet_price,
    simulate_death_times,
    simulate_path,
    survivor_index,
)
from .hedge import (
    ExperimentResult,
    HedgeConfig,
    RiskReport,
    SurplusSample,
    cap_cashflow,
    portfolio_liability,
    portfolio_premium,
    risk_reduction,
    run_experiment,
    summary_stats,
    swap_cashflow,
)

__version__ = "0.1.0"
