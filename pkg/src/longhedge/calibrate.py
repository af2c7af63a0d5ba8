"""Two-stage least-squares calibration from central death rates.

Stage one fits the volatility parameters (sigma1, sigma, gamma, rho) by
matching the model variance of one-year cohort differences of the intensity,

    Var = (sigma1^2 + 2 sigma1 sigma rho e^{gamma x} + sigma^2 e^{2 gamma x}) dt,

to the sample variance of Delta m(x,t) = m(x+1,t+1) - m(x,t) across years.
Stage two, with the volatilities held fixed, fits the drift parameters and
initial factor values to empirical cohort survival curves built from the
base-year column of the table.  A scalar search then picks the market price
of longevity risk so that the risk-adjusted price of a reference longevity
bond matches its real-world-plus-spread price.

Both stages use bounded Nelder-Mead simplex search with seeded random
multistarts; the variance profile is the validated object, since the
volatility parameters themselves are not identified uniquely.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .model import (
    CohortState,
    MarketParams,
    Measure,
    ModelParams,
    _moments_grid,
    integral_moments,
)

__all__ = [
    "MortalityTable",
    "SurvivalCurve",
    "VolatilityFit",
    "DriftFit",
    "CalibrationError",
    "delta_m",
    "sample_variance_delta_m",
    "model_variance_delta_mu",
    "fit_volatility",
    "empirical_survival_curve",
    "fit_drift",
    "longevity_bond_price",
    "calibrate_lambda",
    "synthetic_table",
    "read_mortality_csv",
    "write_mortality_csv",
]

VOL_BOUNDS = ((0.0, 0.1), (0.0, 0.1), (0.0, 0.5), (-1.0, 1.0))
DRIFT_BOUNDS_CORE = ((-0.5, 0.5), (-0.5, 0.5), (0.0, 1.0), (0.0, 0.2))
Y2_BOUNDS = (0.0, 0.2)
DEFAULT_FIT_AGES = tuple(range(60, 91, 5))


class CalibrationError(ValueError):
    """Raised when inputs cannot support the requested calibration."""


@dataclass(frozen=True)
class MortalityTable:
    """Central death rates m(x,t) on a contiguous age-by-year grid."""

    ages: np.ndarray
    years: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        ages = np.asarray(self.ages, dtype=int)
        years = np.asarray(self.years, dtype=int)
        m = np.asarray(self.m, dtype=float)
        if ages.ndim != 1 or years.ndim != 1:
            raise CalibrationError("ages and years must be one-dimensional")
        if np.any(np.diff(ages) != 1) or np.any(np.diff(years) != 1):
            raise CalibrationError("ages and years must be contiguous integer ranges")
        if m.shape != (ages.size, years.size):
            raise CalibrationError(
                f"rate matrix shape {m.shape} does not match "
                f"{ages.size} ages x {years.size} years"
            )
        if np.any(m < 0.0) or not np.all(np.isfinite(m)):
            raise CalibrationError("death rates must be finite and non-negative")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "m", m)

    def age_index(self, x: int) -> int:
        if x < self.ages[0] or x > self.ages[-1]:
            raise CalibrationError(
                f"age {x} outside table range {self.ages[0]}..{self.ages[-1]}"
            )
        return int(x - self.ages[0])

    def rate(self, x: int, year: int) -> float:
        if year < self.years[0] or year > self.years[-1]:
            raise CalibrationError(
                f"year {year} outside table range {self.years[0]}..{self.years[-1]}"
            )
        return float(self.m[self.age_index(x), year - self.years[0]])


@dataclass(frozen=True)
class SurvivalCurve:
    """Empirical survival probabilities S(0, 1..horizon) for one cohort."""

    x: int
    horizon: int
    values: tuple

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if len(values) != self.horizon:
            raise CalibrationError("curve length must equal its horizon")
        prev = 1.0
        for v in values:
            if not 0.0 <= v <= 1.0 + 1e-12:
                raise CalibrationError(f"survival value {v} outside [0, 1]")
            if v > prev + 1e-12:
                raise CalibrationError("survival curve must be non-increasing")
            prev = v
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class VolatilityFit:
    sigma1: float
    sigma: float
    gamma: float
    rho: float
    sse: float


@dataclass(frozen=True)
class DriftFit:
    alpha1: float
    alpha: float
    beta: float
    y1: float
    y2_by_age: dict
    sse: float

    def to_params(self, vol: VolatilityFit) -> ModelParams:
        return ModelParams(
            sigma1=vol.sigma1,
            sigma=vol.sigma,
            gamma=vol.gamma,
            rho=vol.rho,
            alpha1=self.alpha1,
            alpha=self.alpha,
            beta=self.beta,
            y1=self.y1,
            y2_by_age=self.y2_by_age,
        )


# ---------------------------------------------------------------------------
# stage one: volatility from variance matching
# ---------------------------------------------------------------------------


def delta_m(table: MortalityTable) -> np.ndarray:
    """Cohort-direction differences Delta m(x,t) = m(x+1,t+1) - m(x,t).

    Rows cover ages[:-1], columns years[:-1]; the difference follows each
    cohort down its diagonal, never across a fixed age.
    """
    if table.ages.size < 2 or table.years.size < 2:
        raise CalibrationError("table must span at least 2 ages and 2 years")
    return table.m[1:, 1:] - table.m[:-1, :-1]


def sample_variance_delta_m(table: MortalityTable, x: int) -> float:
    """Unbiased sample variance across time of the Delta m row for age ``x``."""
    if table.years.size < 3:
        raise CalibrationError("at least 3 years are needed for a variance")
    i = table.age_index(x)
    if x + 1 > table.ages[-1]:
        raise CalibrationError(f"age {x + 1} missing: cannot difference age {x}")
    row = table.m[i + 1, 1:] - table.m[i, :-1]
    return float(np.var(row, ddof=1))


def _variance_profile(sigma1, sigma, gamma, rho, ages, dt=1.0):
    e = np.exp(gamma * np.asarray(ages, dtype=float))
    return (sigma1 ** 2 + 2.0 * sigma1 * sigma * rho * e + (sigma * e) ** 2) * dt


def model_variance_delta_mu(params: ModelParams, x: int, dt: float = 1.0) -> float:
    """Model variance of a one-year intensity difference at age ``x``."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return float(_variance_profile(params.sigma1, params.sigma, params.gamma, params.rho, [x], dt)[0])


def _multistart_simplex(objective, bounds, n_starts, seed, maxiter, polish_rounds=4):
    """Bounded Nelder-Mead from seeded random starts, then restarts at the
    incumbent until no further improvement.  Returns (x, fun, converged)."""
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    best_x, best_f = None, math.inf
    starts = [lo + (hi - lo) * rng.random(len(bounds)) for _ in range(n_starts)]
    converged = False
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": maxiter, "xatol": 1e-12, "fatol": 1e-24},
        )
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    for _ in range(polish_rounds):
        res = minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": maxiter, "xatol": 1e-14, "fatol": 1e-28},
        )
        improved = res.fun < best_f
        if res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
        if not improved:
            converged = True
            break
    return np.asarray(best_x), best_f, converged


def fit_volatility(
    table: MortalityTable,
    ages=DEFAULT_FIT_AGES,
    n_starts: int = 20,
    seed: int = 0,
    maxiter: int = 4000,
) -> VolatilityFit:
    """Fit (sigma1, sigma, gamma, rho) to the per-age variances of Delta m.

    Minimises the sum of squared differences between the model variance and
    the sample variance at the requested ages, subject to box bounds
    sigma1, sigma in [0, 0.1], gamma in [0, 0.5], rho in [-1, 1].  The
    objective has a gamma/rho trade-off valley, hence the multistarts.
    """
    targets = np.array([sample_variance_delta_m(table, x) for x in ages])
    ages_arr = np.asarray(ages, dtype=float)

    def objective(p):
        resid = _variance_profile(p[0], p[1], p[2], p[3], ages_arr) - targets
        return float(resid @ resid)

    x, sse, converged = _multistart_simplex(objective, VOL_BOUNDS, n_starts, seed, maxiter)
    if not converged:
        warnings.warn(
            f"volatility fit stopped at budget with SSE {sse:.3e}; best point returned",
            stacklevel=2,
        )
    return VolatilityFit(sigma1=float(x[0]), sigma=float(x[1]), gamma=float(x[2]), rho=float(x[3]), sse=sse)


# ---------------------------------------------------------------------------
# stage two: drift from survival-curve matching
# ---------------------------------------------------------------------------


def empirical_survival_curve(table: MortalityTable, x: int, horizon: int) -> SurvivalCurve:
    """Cohort survival curve from the base-year column of the table.

    The base year is the last calendar year in the table; the one-year
    survival probability is approximated by 1 - m, so
    S(0,T) = prod_{v=1}^{T} (1 - m(x+v-1, base_year)).
    """
    if horizon < 1:
        raise CalibrationError(f"horizon must be at least 1, got {horizon}")
    if x + horizon - 1 > table.ages[-1]:
        raise CalibrationError(
            f"table ends at age {table.ages[-1]}; need ages {x}..{x + horizon - 1}"
        )
    col = table.m[table.age_index(x): table.age_index(x) + horizon, -1]
    if np.any(col > 1.0):
        raise CalibrationError("death rates above 1 cannot form survival probabilities")
    return SurvivalCurve(x=x, horizon=horizon, values=tuple(np.cumprod(1.0 - col)))


def _model_curve(params: ModelParams, x: int, horizon: int) -> np.ndarray:
    """Real-world model survival S(0, 1..horizon); non-finite values (from
    extreme drift candidates during the search) propagate as NaN."""
    state = params.initial_state(x)
    spans = np.arange(1, horizon + 1, dtype=float)
    theta, gamma_var = _moments_grid(
        state.Y1, state.Y2, x, spans, params, Measure.real_world()
    )
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(0.5 * gamma_var - theta)


def fit_drift(
    curves,
    vol: VolatilityFit,
    n_starts: int = 20,
    seed: int = 0,
    maxiter: int = 8000,
) -> DriftFit:
    """Fit (alpha1, alpha, beta, y1) and one y2 per cohort to survival curves.

    The volatility parameters are held fixed; model curves are real-world
    survival probabilities.  All supplied curves are fitted jointly, which
    is what identifies the age slope of the drift.
    """
    curves = list(curves)
    if not curves:
        raise CalibrationError("at least one survival curve is required")
    cohort_ages = [c.x for c in curves]
    if len(set(cohort_ages)) != len(cohort_ages):
        raise CalibrationError("one curve per cohort age")
    targets = [np.asarray(c.values) for c in curves]
    bounds = list(DRIFT_BOUNDS_CORE) + [Y2_BOUNDS] * len(curves)

    def objective(p):
        alpha1, alpha, beta, y1 = p[:4]
        sse = 0.0
        for i, curve in enumerate(curves):
            params = ModelParams(
                sigma1=vol.sigma1,
                sigma=vol.sigma,
                gamma=vol.gamma,
                rho=vol.rho,
                alpha1=alpha1,
                alpha=alpha,
                beta=beta,
                y1=y1,
                y2_by_age={curve.x: p[4 + i]},
            )
            model = _model_curve(params, curve.x, curve.horizon)
            if not np.all(np.isfinite(model)):
                return 1e30
            resid = model - targets[i]
            sse += float(resid @ resid)
        return sse

    x, sse, converged = _multistart_simplex(objective, bounds, n_starts, seed, maxiter)
    if not converged:
        warnings.warn(
            f"drift fit stopped at budget with SSE {sse:.3e}; best point returned",
            stacklevel=2,
        )
    y2 = {age: float(x[4 + i]) for i, age in enumerate(cohort_ages)}
    if all(np.allclose(t, 1.0) for t in targets):
        warnings.warn("degenerate target curves (all 1): intensity driven to zero", stacklevel=2)
    return DriftFit(
        alpha1=float(x[0]), alpha=float(x[1]), beta=float(x[2]), y1=float(x[3]),
        y2_by_age=y2, sse=sse,
    )


# ---------------------------------------------------------------------------
# market price of longevity risk
# ---------------------------------------------------------------------------


def longevity_bond_price(
    params: ModelParams,
    market: MarketParams,
    x: int = 65,
    term: int = 25,
    measure: Measure = Measure.real_world(),
) -> float:
    """Price of the reference longevity bond paying the survivor index yearly.

    Real-world pricing carries the spread e^{delta*T} on each coupon; the
    risk-adjusted price has no spread.  Reference-bond quotes compound
    annually, so discounting here uses (1+r)^-T rather than the e^{-rT}
    used for derivative cash flows.
    """
    if term < 1:
        raise ValueError(f"term must be at least 1 year, got {term}")
    state = params.initial_state(x)
    v = 1.0 / (1.0 + market.r)
    total = 0.0
    for T in range(1, term + 1):
        m = integral_moments(state, float(T), params, measure)
        s = math.exp(0.5 * m.gamma_var - m.theta)
        if measure.is_risk_adjusted:
            total += v ** T * s
        else:
            total += v ** T * math.exp(market.delta * T) * s
    return total


_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def calibrate_lambda(
    params: ModelParams,
    market: MarketParams,
    x: int = 65,
    term: int = 25,
    bracket: tuple = (0.0, 30.0),
    gap_tol: float = 1e-4,
) -> float:
    """Market price of longevity risk matching the reference bond price.

    Golden-section search for the lambda in ``bracket`` minimising
    |V_riskadj(lambda) - V_realworld|; the objective is unimodal because the
    risk-adjusted survival curve is monotone in lambda.  Warns when the
    price gap at the minimiser exceeds ``gap_tol``.
    """
    target = longevity_bond_price(params, market, x, term, Measure.real_world())

    def gap(lam: float) -> float:
        vq = longevity_bond_price(params, market, x, term, Measure.risk_adjusted(lam))
        return abs(vq - target)

    lo, hi = float(bracket[0]), float(bracket[1])
    if hi <= lo:
        raise ValueError(f"invalid bracket {bracket}")
    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = gap(c), gap(d)
    while b - a > 1e-8:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = gap(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = gap(d)
    lam = c if fc < fd else d
    residual = min(fc, fd)
    if residual > gap_tol:
        warnings.warn(
            f"bond prices differ by {residual:.3e} at lambda={lam:.4f}; "
            "bracket may not contain an exact match",
            stacklevel=2,
        )
    return float(lam)


# ---------------------------------------------------------------------------
# synthetic data and CSV interchange
# ---------------------------------------------------------------------------


def _log_linear_y2(params: ModelParams):
    """Log-linear extension of the calibrated y2 anchors across ages."""
    items = sorted(params.y2_by_age.items())
    if not items:
        raise CalibrationError("params carry no y2 anchors")
    if len(items) == 1:
        x0, v0 = items[0]
        return lambda x: v0
    xs = np.array([a for a, _ in items], dtype=float)
    logs = np.log(np.maximum([v for _, v in items], 1e-300))
    slope, intercept = np.polyfit(xs, logs, 1)
    return lambda x: math.exp(intercept + slope * x)


def synthetic_table(
    params: ModelParams,
    ages=range(60, 96),
    years=range(1970, 2009),
    seed: int = 0,
    reversion: float = 0.75,
    floor: float = 1e-5,
) -> MortalityTable:
    """Model-consistent synthetic central death rates for calibration tests.

    Each cell is a deterministic base intensity (y1 plus a log-linear
    extension of the y2 anchors) plus two mean-reverting deviation
    processes: a global one driven by the common-factor volatility, shared
    across ages within a calendar year, and a per-cohort one driven by the
    age-dependent volatility along each diagonal, correlated at rho.  The
    reversion keeps levels positive; it inflates the one-year-difference
    variances by (1-k)/(1+k) above the nominal quadratic form (~14% at the
    default), well inside the sampling noise of a 39-year table.
    """
    ages = np.asarray(list(ages), dtype=int)
    years = np.asarray(list(years), dtype=int)
    n_ages, n_years = ages.size, years.size
    rng = np.random.default_rng(seed)
    y2_of = _log_linear_y2(params)
    base = np.array([params.y1 + y2_of(x) for x in ages])

    eps1 = rng.standard_normal(n_years - 1)
    eta = rng.standard_normal((n_ages, n_years - 1))
    w = math.sqrt(1.0 - params.rho ** 2)

    g = np.zeros(n_years)  # global deviation, one value per year
    for j in range(1, n_years):
        g[j] = reversion * g[j - 1] + params.sigma1 * eps1[j - 1]

    dev = np.zeros((n_ages, n_years))
    for j in range(1, n_years):
        # diagonal step: cohort at age index i in year j came from i-1;
        # entrants at the youngest age start a fresh deviation.
        prev = np.concatenate([[0.0], dev[:-1, j - 1]])
        shock = params.rho * eps1[j - 1] + w * eta[:, j - 1]
        sig2 = params.sigma * np.exp(params.gamma * ages)
        dev[:, j] = reversion * prev + sig2 * shock
    m = np.maximum(base[:, None] + g[None, :] + dev, floor)
    return MortalityTable(ages=ages, years=years, m=m)


def read_mortality_csv(path) -> MortalityTable:
    """Read a MortalityTable from a CSV file with header ``age,year,mx``.

    Parsing is strict: the header must match, every row must carry three
    fields, and the (age, year) grid must be complete; errors carry line
    numbers.
    """
    cells = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CalibrationError(f"{path}: no records") from None
        if [h.strip() for h in header] != ["age", "year", "mx"]:
            raise CalibrationError(
                f"{path}:1: expected header 'age,year,mx', got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise CalibrationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                age = int(row[0])
                year = int(row[1])
                mx = float(row[2])
            except ValueError as exc:
                raise CalibrationError(f"{path}:{lineno}: {exc}") from None
            if (age, year) in cells:
                raise CalibrationError(f"{path}:{lineno}: duplicate cell age={age} year={year}")
            cells[(age, year)] = mx
    if not cells:
        raise CalibrationError(f"{path}: no records")
    ages = np.arange(min(a for a, _ in cells), max(a for a, _ in cells) + 1)
    years = np.arange(min(y for _, y in cells), max(y for _, y in cells) + 1)
    m = np.empty((ages.size, years.size))
    for i, a in enumerate(ages):
        for j, y in enumerate(years):
            if (a, y) not in cells:
                raise CalibrationError(f"{path}: missing cell age={a} year={y}")
            m[i, j] = cells[(a, y)]
    return MortalityTable(ages=ages, years=years, m=m)


def write_mortality_csv(table: MortalityTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["age", "year", "mx"])
        for i, a in enumerate(table.ages):
            for j, y in enumerate(table.years):
                writer.writerow([int(a), int(y), repr(float(table.m[i, j]))])
