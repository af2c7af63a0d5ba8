"""Command-line front end: calibration, pricing, hedge experiments, data.

Parameter and config files are flat ``key = value`` text, one key per line,
``#`` for comments.  Exit codes: 0 success, 1 runtime or numerical failure,
2 input or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import calibrate as cal
from .hedge import HedgeConfig, run_experiment, summary_stats
from .model import MarketParams, ModelParams
from .price import (
    CapletSpec,
    CapSpec,
    SForwardSpec,
    SwapSpec,
    ValuationContext,
    annuity_price,
    cap_price,
    caplet_price,
    floorlet_price,
    sforward_price,
    sforward_rate,
    swap_value,
)
from .sim import RngSpec, mc_caplet_price

__all__ = ["main", "DEFAULT_PARAMS", "DEFAULT_MARKET"]

# Bundled example calibration: Australian males 1970-2008, ages 60-95,
# cohorts 65 and 75.  Used when no parameter file is supplied.
DEFAULT_PARAMS = ModelParams(
    sigma1=0.0022465,
    sigma=0.0000002,
    gamma=0.129832,
    rho=-0.795875,
    alpha1=0.0017508,
    alpha=0.0000615,
    beta=0.120931,
    y1=0.0021277,
    y2_by_age={65: 0.0084923, 75: 0.0294695},
)
DEFAULT_MARKET = MarketParams(r=0.04, lam=0.0, delta=0.002, omega=110)

_MODEL_KEYS = ("sigma1", "sigma", "gamma", "rho", "alpha1", "alpha", "beta", "y1")
_MARKET_KEYS = ("r", "lambda", "delta", "omega")
_HEDGE_KEYS = ("x", "n", "lambda", "T_hat", "num_sims", "q", "seed", "dt", "threads")


class UsageError(ValueError):
    """Bad input files or flags; maps to exit code 2."""


def _parse_kv(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                if not key or not value:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
                if key in out:
                    raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
                out[key] = value
    except OSError as exc:
        raise UsageError(str(exc)) from None
    return out


def _read_params_file(path):
    kv = _parse_kv(path)
    model_kwargs = {}
    y2 = {}
    market_kwargs = {}
    for key, value in kv.items():
        if key in _MODEL_KEYS:
            model_kwargs[key] = float(value)
        elif key.startswith("y2_"):
            try:
                age = int(key[3:])
            except ValueError:
                raise UsageError(f"{path}: bad y2 key {key!r} (want y2_<age>)") from None
            y2[age] = float(value)
        elif key in _MARKET_KEYS:
            market_kwargs[key] = value
        else:
            raise UsageError(f"{path}: unknown key {key!r}")
    missing = [k for k in _MODEL_KEYS if k not in model_kwargs]
    if missing:
        raise UsageError(f"{path}: missing keys {', '.join(missing)}")
    if not y2:
        raise UsageError(f"{path}: at least one y2_<age> entry is required")
    try:
        params = ModelParams(y2_by_age=y2, **model_kwargs)
        market = MarketParams(
            r=float(market_kwargs.get("r", DEFAULT_MARKET.r)),
            lam=float(market_kwargs.get("lambda", DEFAULT_MARKET.lam)),
            delta=float(market_kwargs.get("delta", DEFAULT_MARKET.delta)),
            omega=int(market_kwargs.get("omega", DEFAULT_MARKET.omega)),
        )
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return params, market


def _write_params_file(path, params: ModelParams, market: MarketParams, extras=()):
    with open(path, "w") as fh:
        for key in _MODEL_KEYS:
            fh.write(f"{key} = {getattr(params, key)!r}\n")
        for age in sorted(params.y2_by_age):
            fh.write(f"y2_{age} = {params.y2_by_age[age]!r}\n")
        fh.write(f"r = {market.r!r}\n")
        fh.write(f"lambda = {market.lam!r}\n")
        fh.write(f"delta = {market.delta!r}\n")
        fh.write(f"omega = {market.omega}\n")
        for key, value in extras:
            fh.write(f"{key} = {value!r}\n")


def _market_from_args(args, base: MarketParams) -> MarketParams:
    return MarketParams(
        r=args.r if args.r is not None else base.r,
        lam=getattr(args, "lam", None) if getattr(args, "lam", None) is not None else base.lam,
        delta=args.delta if args.delta is not None else base.delta,
        omega=args.omega if args.omega is not None else base.omega,
    )


def cmd_calibrate(args) -> int:
    table = cal.read_mortality_csv(args.data)
    fit_ages = tuple(range(args.age_min, args.age_max + 1, args.age_step))
    vol = cal.fit_volatility(table, ages=fit_ages, seed=args.seed)
    curves = []
    for spec in args.cohorts.split(","):
        x_str, hor_str = spec.split(":")
        curves.append(cal.empirical_survival_curve(table, int(x_str), int(hor_str)))
    drift = cal.fit_drift(curves, vol, seed=args.seed)
    params = drift.to_params(vol)
    market = MarketParams(r=args.r if args.r is not None else DEFAULT_MARKET.r,
                          lam=0.0,
                          delta=args.delta if args.delta is not None else DEFAULT_MARKET.delta,
                          omega=args.omega if args.omega is not None else DEFAULT_MARKET.omega)
    if args.calibrate_lambda:
        lam = cal.calibrate_lambda(params, market, x=curves[0].x, term=args.bond_term)
        market = MarketParams(r=market.r, lam=lam, delta=market.delta, omega=market.omega)
    _write_params_file(
        args.out, params, market,
        extras=[("sse_volatility", vol.sse), ("sse_drift", drift.sse)],
    )
    print(f"wrote {args.out} (sse_volatility={vol.sse:.6e}, sse_drift={drift.sse:.6e})")
    return 0


def _instrument_price(args, params: ModelParams, market: MarketParams):
    x = args.x
    ctx = ValuationContext.at_inception(params, market, x)
    name = args.instrument
    if name in ("caplet", "floorlet"):
        if args.T is None or args.K is None:
            raise UsageError(f"{name} needs --T and --K")
        spec = CapletSpec(x, args.T, args.K)
        if args.mc:
            if name == "floorlet":
                raise UsageError("--mc applies to caplets only")
            return mc_caplet_price(
                spec, params, market, num_paths=args.paths, dt=args.dt, rng=RngSpec(args.seed)
            )
        return (caplet_price if name == "caplet" else floorlet_price)(spec, ctx), None
    if args.mc:
        raise UsageError("--mc applies to caplets only")
    if name == "sforward":
        if args.T is None:
            raise UsageError("sforward needs --T")
        k = args.K if args.K is not None else sforward_rate(x, args.T, params, market)
        return sforward_price(SForwardSpec(x, args.T, k), ctx), None
    if name == "swap":
        if args.t_hat is None:
            raise UsageError("swap needs --That")
        if args.at_inception or args.K is None:
            spec = SwapSpec.at_market(x, args.t_hat, params, market)
        else:
            spec = SwapSpec(x, (args.K,) * args.t_hat)
        return swap_value(spec, ctx), None
    if name == "cap":
        if args.t_hat is None:
            raise UsageError("cap needs --That")
        if args.K is None:
            spec = CapSpec.best_estimate(x, args.t_hat, params, market)
        else:
            spec = CapSpec(x, (args.K,) * args.t_hat)
        return cap_price(spec, ctx), None
    if name == "annuity":
        return annuity_price(x, params, market), None
    if name == "bond":
        measure = market.measure() if args.risk_adjusted else None
        if measure is None:
            from .model import REAL_WORLD
            measure = REAL_WORLD
        return cal.longevity_bond_price(params, market, x=x, term=args.bond_term, measure=measure), None
    raise UsageError(f"unknown instrument {name!r}")


def cmd_price(args) -> int:
    if args.params:
        params, market = _read_params_file(args.params)
    else:
        params, market = DEFAULT_PARAMS, DEFAULT_MARKET
    market = _market_from_args(args, market)
    value, ci = _instrument_price(args, params, market)
    if ci is not None:
        print(f"{value:.6f} [{ci[0]:.6f}, {ci[1]:.6f}]")
    else:
        print(f"{value:.6f}")
    return 0


def cmd_hedge(args) -> int:
    kv = _parse_kv(args.config)
    unknown = [k for k in kv if k not in _HEDGE_KEYS and k not in _MODEL_KEYS
               and not k.startswith("y2_") and k not in _MARKET_KEYS]
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {', '.join(sorted(unknown))}")
    has_model = any(k in kv for k in _MODEL_KEYS)
    if has_model:
        params, market = _read_params_file_from_kv(args.config, kv)
    else:
        params, market = DEFAULT_PARAMS, DEFAULT_MARKET
    try:
        config = HedgeConfig(
            x=int(kv.get("x", 65)),
            n=int(kv.get("n", 4000)),
            lam=float(kv.get("lambda", market.lam)),
            t_hat=int(kv.get("T_hat", 30)),
            num_sims=int(kv.get("num_sims", 5000)),
            q=float(kv.get("q", 0.01)),
            seed=int(kv.get("seed", 0)),
            dt=float(kv.get("dt", 1.0 / 50.0)),
            threads=args.threads if args.threads is not None else int(kv.get("threads", 1)),
        )
    except ValueError as exc:
        raise UsageError(f"{args.config}: {exc}") from None

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_experiment(config, params, market)
        reports = {
            "no_hedge": summary_stats(result.d_no, config.q),
            "swap_hedged": summary_stats(result.d_swap, config.q),
            "cap_hedged": summary_stats(result.d_cap, config.q),
        }
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    rows = []
    for portfolio, rep in reports.items():
        rows.append(
            f"{portfolio},{config.lam!r},{config.t_hat},{config.n},"
            f"{rep.mean:.6f},{rep.std_dev:.6f},{rep.skewness:.6f},"
            f"{rep.var_q:.6f},{rep.es_q:.6f}"
        )
    csv_text = "portfolio,lambda,T_hat,n,mean,std,skew,var99,es99\n" + "\n".join(rows) + "\n"
    with open(args.out_csv, "w", newline="") as fh:
        fh.write(csv_text)
    payload = {
        "config": {
            "x": config.x, "n": config.n, "lambda": config.lam, "T_hat": config.t_hat,
            "num_sims": config.num_sims, "q": config.q, "seed": config.seed, "dt": config.dt,
        },
        "premium_per_policy": result.premium,
        "cap_premium_per_policy": result.cap_premium,
        "reports": {
            name: {
                "mean": rep.mean, "std": rep.std_dev, "skew": rep.skewness,
                "var_q": rep.var_q, "es_q": rep.es_q,
            }
            for name, rep in reports.items()
        },
    }
    with open(args.out_json, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.samples_csv:
        with open(args.samples_csv, "w", newline="") as fh:
            fh.write("d_no,d_swap,d_cap\n")
            for row in zip(result.d_no, result.d_swap, result.d_cap):
                fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r}\n")
    print(f"wrote {args.out_csv} and {args.out_json}")
    return 0


def _read_params_file_from_kv(path, kv):
    filtered = {k: v for k, v in kv.items()
                if k in _MODEL_KEYS or k.startswith("y2_") or k in _MARKET_KEYS}
    import tempfile, os
    fd, tmp = tempfile.mkstemp(suffix=".txt")
    try:
        with os.fdopen(fd, "w") as fh:
            for k, v in filtered.items():
                fh.write(f"{k} = {v}\n")
        return _read_params_file(tmp)
    finally:
        os.unlink(tmp)


def cmd_synth_data(args) -> int:
    if args.params:
        params, _ = _read_params_file(args.params)
    else:
        params = DEFAULT_PARAMS
    table = cal.synthetic_table(
        params,
        ages=range(args.age_min, args.age_max + 1),
        years=range(args.year_min, args.year_max + 1),
        seed=args.seed,
    )
    cal.write_mortality_csv(table, args.out)
    print(f"wrote {args.out} ({table.ages.size} ages x {table.years.size} years)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="longhedge",
        description="Pricing, calibration and hedge analysis for index-based longevity derivatives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="fit model parameters from a mortality CSV")
    p_cal.add_argument("data", help="CSV with header age,year,mx")
    p_cal.add_argument("--out", default="params.txt")
    p_cal.add_argument("--age-min", type=int, default=60)
    p_cal.add_argument("--age-max", type=int, default=90)
    p_cal.add_argument("--age-step", type=int, default=5)
    p_cal.add_argument("--cohorts", default="65:31,75:21",
                       help="comma-separated cohort:horizon pairs for the drift fit")
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.add_argument("--r", type=float, default=None)
    p_cal.add_argument("--delta", type=float, default=None)
    p_cal.add_argument("--omega", type=int, default=None)
    p_cal.add_argument("--calibrate-lambda", action="store_true",
                       help="also calibrate the market price of longevity risk")
    p_cal.add_argument("--bond-term", type=int, default=25)
    p_cal.set_defaults(func=cmd_calibrate)

    p_price = sub.add_parser("price", help="price one instrument")
    p_price.add_argument("instrument",
                         choices=["sforward", "swap", "caplet", "cap", "floorlet", "annuity", "bond"])
    p_price.add_argument("--params", default=None, help="parameter file (default: bundled fit)")
    p_price.add_argument("--x", type=int, default=65)
    p_price.add_argument("--T", type=int, default=None)
    p_price.add_argument("--K", type=float, default=None)
    p_price.add_argument("--That", dest="t_hat", type=int, default=None)
    p_price.add_argument("--lambda", dest="lam", type=float, default=None)
    p_price.add_argument("--r", type=float, default=None)
    p_price.add_argument("--delta", type=float, default=None)
    p_price.add_argument("--omega", type=int, default=None)
    p_price.add_argument("--at-inception", action="store_true",
                         help="strike swaps at their swap rates")
    p_price.add_argument("--risk-adjusted", action="store_true",
                         help="bond: price under the risk-adjusted measure")
    p_price.add_argument("--bond-term", type=int, default=25)
    p_price.add_argument("--mc", action="store_true", help="Monte Carlo estimate with 95%% CI")
    p_price.add_argument("--paths", type=int, default=100_000)
    p_price.add_argument("--dt", type=float, default=1.0 / 50.0)
    p_price.add_argument("--seed", type=int, default=0)
    p_price.set_defaults(func=cmd_price)

    p_hedge = sub.add_parser("hedge", help="run the surplus-distribution experiment")
    p_hedge.add_argument("config", help="key = value config file")
    p_hedge.add_argument("--out-csv", default="hedge_report.csv")
    p_hedge.add_argument("--out-json", default="hedge_report.json")
    p_hedge.add_argument("--samples-csv", default=None,
                         help="optional per-simulation sample dump for plotting")
    p_hedge.add_argument("--threads", type=int, default=None, help="0 = auto")
    p_hedge.set_defaults(func=cmd_hedge)

    p_synth = sub.add_parser("synth-data", help="generate a model-consistent mortality CSV")
    p_synth.add_argument("--out", default="synthetic.csv")
    p_synth.add_argument("--params", default=None)
    p_synth.add_argument("--age-min", type=int, default=60)
    p_synth.add_argument("--age-max", type=int, default=95)
    p_synth.add_argument("--year-min", type=int, default=1970)
    p_synth.add_argument("--year-max", type=int, default=2008)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, cal.CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
