"""Closed-form prices of index-based longevity instruments.

All payoffs are written on the survivor index exp(-int_0^T mu dv) of a single
cohort.  Because the integrated intensity is Gaussian, the index is lognormal
and caplets/floorlets admit Black-Scholes-style formulas; S-forwards, swaps,
caps and life annuities follow from the risk-adjusted survival curve.

Cash flows occur at integer years and are discounted continuously at the flat
rate ``market.r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtr

from .model import (
    CohortState,
    MarketParams,
    Measure,
    ModelParams,
    integral_moments,
)

__all__ = [
    "SForwardSpec",
    "CapletSpec",
    "SwapSpec",
    "CapSpec",
    "ValuationContext",
    "discount",
    "sforward_rate",
    "sforward_price",
    "swap_value",
    "caplet_price",
    "floorlet_price",
    "cap_price",
    "annuity_price",
]

# Below this integral variance the index is treated as deterministic and
# option prices collapse to intrinsic value.
_GAMMA_FLOOR = 1e-14


@dataclass(frozen=True)
class SForwardSpec:
    """Survivor forward: exchanges fixed ``K`` for the survivor index at ``T``."""

    x: int
    T: int
    K: float
    notional: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.K < 1.0:
            raise ValueError(f"fixed rate must lie in (0, 1), got {self.K}")
        if self.T < 1:
            raise ValueError(f"maturity must be at least 1 year, got {self.T}")


@dataclass(frozen=True)
class CapletSpec:
    """Longevity caplet: pays max(index(T) - K, 0) at ``T``."""

    x: int
    T: int
    K: float
    notional: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.K < 1.0:
            raise ValueError(f"strike must lie in (0, 1), got {self.K}")
        if self.T < 1:
            raise ValueError(f"maturity must be at least 1 year, got {self.T}")


def _check_strikes(strikes: tuple) -> None:
    if not strikes:
        raise ValueError("at least one maturity is required")
    for k in strikes:
        if not 0.0 < k < 1.0:
            raise ValueError(f"strikes must lie in (0, 1), got {k}")


@dataclass(frozen=True)
class SwapSpec:
    """Longevity swap: portfolio of S-forwards at maturities 1..len(strikes)."""

    x: int
    strikes: tuple
    notional: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))
        _check_strikes(self.strikes)

    @classmethod
    def at_market(
        cls, x: int, t_hat: int, params: ModelParams, market: MarketParams, notional: float = 1.0
    ) -> "SwapSpec":
        """Swap with strikes equal to the swap rates, so it is worth zero now."""
        strikes = tuple(sforward_rate(x, T, params, market) for T in range(1, t_hat + 1))
        return cls(x=x, strikes=strikes, notional=notional)


@dataclass(frozen=True)
class CapSpec:
    """Longevity cap: portfolio of caplets at maturities 1..len(strikes)."""

    x: int
    strikes: tuple
    notional: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))
        _check_strikes(self.strikes)

    @classmethod
    def best_estimate(
        cls, x: int, t_hat: int, params: ModelParams, market: MarketParams, notional: float = 1.0
    ) -> "CapSpec":
        """Cap struck at the real-world survival curve (the natural strike)."""
        state = params.initial_state(x)
        strikes = []
        for T in range(1, t_hat + 1):
            m = integral_moments(state, T, params, Measure.real_world())
            strikes.append(math.exp(0.5 * m.gamma_var - m.theta))
        return cls(x=x, strikes=tuple(strikes), notional=notional)


@dataclass(frozen=True)
class ValuationContext:
    """Everything needed to value an index instrument at time ``state.t``:
    the survivor index realised so far, the factor state, and market data."""

    realized_survival: float
    state: CohortState
    params: ModelParams
    market: MarketParams

    def __post_init__(self) -> None:
        if not 0.0 < self.realized_survival <= 1.0:
            raise ValueError(
                f"realised survival must lie in (0, 1], got {self.realized_survival}"
            )
        if self.state.t == 0.0 and self.realized_survival != 1.0:
            raise ValueError("realised survival must be 1 at inception")

    @classmethod
    def at_inception(cls, params: ModelParams, market: MarketParams, x: int) -> "ValuationContext":
        return cls(1.0, params.initial_state(x), params, market)


def discount(market: MarketParams, t: float) -> float:
    """Zero-coupon bond price exp(-r*t) for maturity ``t`` years."""
    if t < 0.0:
        raise ValueError(f"maturity must be non-negative, got {t}")
    return math.exp(-market.r * t)


def _forward_survival(ctx: ValuationContext, T: float):
    """Risk-adjusted moments and survival over [state.t, T]."""
    m = integral_moments(ctx.state, T, ctx.params, ctx.market.measure())
    return m, math.exp(0.5 * m.gamma_var - m.theta)


def sforward_rate(x: int, T: int, params: ModelParams, market: MarketParams) -> float:
    """Swap rate K(T): the risk-adjusted survival probability to ``T``,
    which makes an S-forward costless at inception."""
    if T == 0:
        return 1.0
    state = params.initial_state(x)
    m = integral_moments(state, T, params, market.measure())
    return math.exp(0.5 * m.gamma_var - m.theta)


def sforward_price(spec: SForwardSpec, ctx: ValuationContext) -> float:
    """Mark-to-market value of an S-forward.

    Per unit notional this is B(t,T) * (realised survival to t times the
    risk-adjusted survival over (t,T], minus the fixed rate K).
    """
    t = ctx.state.t
    if spec.T < t:
        raise ValueError(f"maturity {spec.T} lies in the past (t={t})")
    _, s_fwd = _forward_survival(ctx, spec.T)
    b = discount(ctx.market, spec.T - t)
    return spec.notional * b * (ctx.realized_survival * s_fwd - spec.K)


def swap_value(spec: SwapSpec, ctx: ValuationContext) -> float:
    """Value of a longevity swap: the sum of its S-forward values.

    Maturities already past contribute nothing (their flows have settled).
    """
    total = 0.0
    for T, K in enumerate(spec.strikes, start=1):
        if T < ctx.state.t:
            continue
        total += sforward_price(SForwardSpec(spec.x, T, K, spec.notional), ctx)
    return total


def caplet_price(spec: CapletSpec, ctx: ValuationContext) -> float:
    """Price of a longevity caplet paying max(index(T) - K, 0) at ``T``.

    With F = realised survival times the risk-adjusted forward survival and
    G the variance of the remaining integrated intensity,

        price = B * (F * Phi(sqrt(G) - d) - K * Phi(-d)),
        d = (ln(K/F) + G/2) / sqrt(G).

    When G vanishes the price degenerates to discounted intrinsic value.
    """
    t = ctx.state.t
    if spec.T < t:
        raise ValueError(f"maturity {spec.T} lies in the past (t={t})")
    m, s_fwd = _forward_survival(ctx, spec.T)
    f = ctx.realized_survival * s_fwd
    b = discount(ctx.market, spec.T - t)
    if m.gamma_var < _GAMMA_FLOOR:
        return spec.notional * b * max(f - spec.K, 0.0)
    sd = math.sqrt(m.gamma_var)
    d = (math.log(spec.K / f) + 0.5 * m.gamma_var) / sd
    return spec.notional * b * (f * float(ndtr(sd - d)) - spec.K * float(ndtr(-d)))


def floorlet_price(spec: CapletSpec, ctx: ValuationContext) -> float:
    """Price of a longevity floorlet paying max(K - index(T), 0) at ``T``.

    Same lognormal setup as the caplet with the Phi arguments negated;
    equals caplet minus S-forward by parity.
    """
    t = ctx.state.t
    if spec.T < t:
        raise ValueError(f"maturity {spec.T} lies in the past (t={t})")
    m, s_fwd = _forward_survival(ctx, spec.T)
    f = ctx.realized_survival * s_fwd
    b = discount(ctx.market, spec.T - t)
    if m.gamma_var < _GAMMA_FLOOR:
        return spec.notional * b * max(spec.K - f, 0.0)
    sd = math.sqrt(m.gamma_var)
    d = (math.log(spec.K / f) + 0.5 * m.gamma_var) / sd
    return spec.notional * b * (spec.K * float(ndtr(d)) - f * float(ndtr(d - sd)))


def cap_price(spec: CapSpec, ctx: ValuationContext) -> float:
    """Price of a longevity cap: the sum of its caplet prices."""
    total = 0.0
    for T, K in enumerate(spec.strikes, start=1):
        if T < ctx.state.t:
            continue
        total += caplet_price(CapletSpec(spec.x, T, K, spec.notional), ctx)
    return total


def annuity_price(x: int, params: ModelParams, market: MarketParams) -> float:
    """Single premium of a whole-life annuity of 1 per year in arrears.

    Payments run at integer years while the annuitant survives, truncated at
    the maximum age: a_x = sum_{T=1}^{omega-x} B(0,T) * S~(0,T), valued under
    the risk-adjusted measure implied by ``market.lam``.  No loading.
    """
    if x >= market.omega:
        raise ValueError(f"age {x} must be below the maximum age {market.omega}")
    state = params.initial_state(x)
    measure = market.measure()
    total = 0.0
    for T in range(1, market.omega - x + 1):
        m = integral_moments(state, T, params, measure)
        total += discount(market, T) * math.exp(0.5 * m.gamma_var - m.theta)
    return total
