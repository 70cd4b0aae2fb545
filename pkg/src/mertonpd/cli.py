"""Command-line interface: ``merton <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

import argparse
import json
import math
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DomainError, HistoryFormatError, NotPositiveSemidefiniteError
from .inference.criteria import POINTWISE, waic, wbic_beta, wbic_from_sample
from .inference.fitting import FitConfig, map_fit
from .inference.mcmc import pseudo_marginal_mcmc
from .io import (SCHEMA_VERSION, dump_json, fit_record, format_curve, format_history,
                 generate_synthetic, parse_history_csv)
from .model import FAMILIES, ModelParams, cross_time_default_correlation, make_kernel, map_asset_to_default, \
    tangent_slope_A
from .simulation import estimator_z, simulate_panel
from .variance import delta_curve, variance_asymptotic, variance_curve

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


class NumericalFailure(RuntimeError):
    pass


def parse_range(text):
    """``start:stop:step`` (stop included when the grid hits it) or a comma list."""
    text = text.strip()
    if ":" not in text:
        try:
            return [float(v) for v in text.split(",")]
        except ValueError:
            raise DomainError(f"bad number list {text!r}") from None
    parts = text.split(":")
    if len(parts) != 3:
        raise DomainError(f"range must be start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(v) for v in parts)
    except ValueError:
        raise DomainError(f"bad range {text!r}") from None
    if not step > 0 or stop < start or not all(map(math.isfinite, (start, stop, step))):
        raise DomainError(f"range needs start <= stop and step > 0, got {text!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    # round away binary noise so 0.1:3.0:0.1 prints 0.3, not 0.30000000000000004
    return [float(round(start + i * step, 12)) for i in range(count)]


def positive_int(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(x) or x != int(x) or x < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(x)


def nonneg_int(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(x) or x != int(x) or x < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return int(x)


def finite_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {text!r}")
    return x


def bounds_pair(text):
    parts = text.split(":")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"bounds must be lo:hi, got {text!r}")
    return (finite_float(parts[0]), finite_float(parts[1]))


def _emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="ascii", newline="\n")


def _model(args):
    return ModelParams(args.p, args.rhoA, make_kernel(args.kernel, args.param))


def cmd_mapping(args):
    ps = parse_range(args.p)
    rhos = parse_range(args.rhoA)
    rows = []
    for p in ps:
        a = tangent_slope_A(p)
        f = np.atleast_1d(map_asset_to_default(p, np.array(rhos)))
        rows.extend((p, r, float(v), a * r) for r, v in zip(rhos, f))
    _emit(format_curve(("p", "rho_A", "rho_D", "tangent"), rows), args.out)


def _t_grid(args):
    if args.t is not None:
        t = parse_range(args.t)
    else:
        t = np.unique(np.round(np.logspace(0, math.log10(args.T), args.points)).astype(np.int64)).tolist()
    if any(v < 1 or v != int(v) for v in t):
        raise DomainError("t values must be positive integers")
    return [int(v) for v in t]


def cmd_variance(args):
    params = _model(args)
    t = _t_grid(args)
    curve = variance_curve(params, args.n, t)
    rows = []
    for j, tj in enumerate(t):
        c_t = float(cross_time_default_correlation(params, tj))
        asym = variance_asymptotic(params, args.n, tj)[0] if tj >= 2 else float("nan")
        rows.append((tj, c_t, curve["total"][j], curve["lower"][j], curve["upper"][j], asym))
    _emit(format_curve(("t", "C_t", "V_exact", "V_lower", "V_upper", "V_asymptotic"), rows), args.out)


def cmd_scaling(args):
    gammas = parse_range(args.gammas)
    base = ModelParams(args.p, args.rhoA, make_kernel("power", 1.0))
    points = delta_curve(gammas, base, args.n, args.T)
    if not all(math.isfinite(pt.delta) for pt in points):
        raise NumericalFailure("non-finite scaling exponent")
    _emit(format_curve(("gamma", "delta"), [(g, pt.delta) for g, pt in zip(gammas, points)]), args.out)


def cmd_simulate(args):
    params = _model(args)
    history = simulate_panel(params, [args.n] * args.T, args.seed, start_year=args.start_year)
    stats = estimator_z(history)
    _emit(format_history(history), args.out)
    if args.stats:
        rec = {"z": stats.z, "per_year_rates": list(stats.per_year_rates), "seed": args.seed,
               "schema_version": SCHEMA_VERSION}
        Path(args.stats).write_text(dump_json(rec), encoding="ascii", newline="\n")


def cmd_generate(args):
    params = _model(args)
    if args.out is None:
        raise DomainError("generate needs --out")
    generate_synthetic(params, args.T, args.n, args.seed, args.out, start_year=args.start_year)


def _config(args):
    kw = dict(n_paths=args.n_paths, seed=args.seed, n_starts=args.n_starts, mcmc_paths=args.mcmc_paths,
              warmup=args.warmup)
    for name in ("p_bounds", "rho_bounds", "theta_bounds", "gamma_bounds"):
        value = getattr(args, name)
        if value is not None:
            kw[name] = value
    return FitConfig(**kw)


def _families(text):
    if text == "both":
        return ["exponential", "power"]
    if text not in FAMILIES:
        raise DomainError(f"unknown kernel family {text!r}")
    return [text]


def _criteria(history, family, config, draws, pointwise, want_waic=True, want_wbic=True):
    out = {}
    if want_waic:
        sample = pseudo_marginal_mcmc(history, family, config, draws, beta=1.0)
        out["waic"] = waic(history, sample, config.n_paths, config.seed, pointwise)
        out["acceptance_rate"] = sample.acceptance_rate
    if want_wbic:
        tempered = pseudo_marginal_mcmc(history, family, config, draws, beta=wbic_beta(len(history)))
        out["wbic"] = wbic_from_sample(tempered)
        out["wbic_acceptance_rate"] = tempered.acceptance_rate
    for key in ("waic", "wbic"):
        if key in out and not math.isfinite(out[key]):
            raise NumericalFailure(f"{key} is not finite")
    return out


def cmd_fit(args):
    history = parse_history_csv(args.input)
    config = _config(args)
    records = []
    for family in _families(args.kernel):
        result = map_fit(history, family, config)
        if not math.isfinite(result.log_posterior):
            raise NumericalFailure(f"{family} fit has a non-finite log posterior")
        if args.waic or args.wbic:
            crit = _criteria(history, family, config, args.draws, args.pointwise, args.waic, args.wbic)
            result = replace(result, waic=crit.get("waic"), wbic=crit.get("wbic"))
        records.append(fit_record(result, args.seed, config.n_paths))
    _emit(dump_json(records[0] if len(records) == 1 else records), args.out)


def compare_schema():
    text = resources.files("mertonpd").joinpath("compare.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def cmd_compare(args):
    import jsonschema

    history = parse_history_csv(args.input)
    config = _config(args)
    models = []
    for family in _families(args.kernel):
        crit = _criteria(history, family, config, args.draws, args.pointwise)
        models.append({"family": family, "waic": crit["waic"], "wbic": crit["wbic"],
                       "acceptance_rate": crit["acceptance_rate"],
                       "wbic_acceptance_rate": crit["wbic_acceptance_rate"]})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "years": len(history),
        "scale": "-2 log likelihood (smaller is better)",
        "pointwise": args.pointwise,
        "wbic_beta": wbic_beta(len(history)),
        "draws": args.draws,
        "seed": args.seed,
        "models": models,
    }
    jsonschema.validate(doc, compare_schema())
    _emit(dump_json(doc), args.out)


def build_parser():
    parser = argparse.ArgumentParser(prog="merton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output file (default stdout)"):
        p.add_argument("--out", default=None, help=out_help)
        p.add_argument("--seed", type=nonneg_int, default=0)

    def model(p, family="exponential", param=0.5, pd=0.0151, rho=0.2):
        p.add_argument("--p", type=finite_float, default=pd)
        p.add_argument("--rhoA", type=finite_float, default=rho)
        p.add_argument("--kernel", choices=sorted(FAMILIES), default=family)
        p.add_argument("--param", type=finite_float, default=param, help="theta or gamma")

    p = sub.add_parser("mapping", help="default correlation f(rho_A) and its tangent line")
    p.add_argument("--p", default="0.01,0.1,0.5", help="list or start:stop:step")
    p.add_argument("--rhoA", default="0:1:0.01")
    common(p)
    p.set_defaults(func=cmd_mapping)

    p = sub.add_parser("variance", help="C(t) and V(Z(t)) curves with bounds")
    model(p, pd=0.5, rho=0.5)
    p.add_argument("--n", type=positive_int, default=10000)
    p.add_argument("--t", default=None, help="start:stop:step grid of horizons")
    p.add_argument("--T", type=positive_int, default=100000, help="largest horizon for the log grid")
    p.add_argument("--points", type=positive_int, default=60)
    common(p)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("scaling", help="scaling exponent delta against gamma")
    p.add_argument("--gammas", default="0.1:3.0:0.1")
    p.add_argument("--T", type=positive_int, default=100000)
    p.add_argument("--p", type=finite_float, default=0.5)
    p.add_argument("--rhoA", type=finite_float, default=0.5)
    p.add_argument("--n", type=positive_int, default=10000)
    common(p)
    p.set_defaults(func=cmd_scaling)

    for name, helptext in (("simulate", "simulate a default history"),
                           ("generate", "write a synthetic history and its truth sidecar")):
        p = sub.add_parser(name, help=helptext)
        model(p, family="power", param=0.3)
        p.add_argument("--T", type=positive_int, default=99)
        p.add_argument("--n", type=positive_int, default=10000)
        p.add_argument("--start-year", type=int, default=1)
        if name == "simulate":
            p.add_argument("--stats", default=None, help="PanelStats JSON path")
            p.set_defaults(func=cmd_simulate)
        else:
            p.set_defaults(func=cmd_generate)
        common(p)

    for name, helptext in (("fit", "MAP fit of one or both kernel families"),
                           ("compare", "WAIC and WBIC for each kernel family")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True)
        p.add_argument("--kernel", default="both" if name == "compare" else "power",
                       choices=["exponential", "power", "both"])
        p.add_argument("--n-paths", type=positive_int, default=4096)
        p.add_argument("--n-starts", type=positive_int, default=8)
        p.add_argument("--mcmc-paths", type=positive_int, default=256)
        p.add_argument("--warmup", type=nonneg_int, default=1000)
        p.add_argument("--draws", type=positive_int, default=2000)
        p.add_argument("--pointwise", choices=POINTWISE, default="sequential")
        p.add_argument("--p-bounds", type=bounds_pair, default=None)
        p.add_argument("--rho-bounds", type=bounds_pair, default=None)
        p.add_argument("--theta-bounds", type=bounds_pair, default=None)
        p.add_argument("--gamma-bounds", type=bounds_pair, default=None)
        if name == "fit":
            p.add_argument("--waic", action="store_true")
            p.add_argument("--wbic", action="store_true")
            p.set_defaults(func=cmd_fit)
        else:
            p.set_defaults(func=cmd_compare)
        common(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NotPositiveSemidefiniteError as exc:
        print(f"merton: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, HistoryFormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"merton: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"merton: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
