"""Command-line interface.

Subcommands: ``fit``, ``effects``, ``lrtest``, ``influence``,
``simulate``.  Every run writes its results plus a
``<out>.manifest.json`` provenance file (command line, input hashes,
seeds, version, timestamp).  Result files themselves contain no
timestamps, so reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import serialize
from .dataset import load_csv, load_spec
from .influence import search_influence
from .lrtest import lr_test, mc_null_distribution
from .mixed import fit_mixed_mnl, mixed_effects
from .mnl import elasticities, fit_mnl, pseudo_elasticities
from .negbin import fit_mixed_nb, fit_nb, marginal_effects
from .optimize import FitResult, OptimizationError, OptimSettings
from .reporting import VERSION, RunManifest, fit_table_text
from .simulate import DgpConfig, generate


def _load_settings(path) -> OptimSettings:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    allowed = {"max_iterations", "gradient_tolerance", "step_tolerance",
               "hessian_fd_step"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown optimizer settings {sorted(unknown)}")
    return OptimSettings(**d)


def _settings(args) -> OptimSettings | None:
    return _load_settings(args.settings) if args.settings else None


def _manifest(args, input_paths, seed=None, n_draws=None) -> RunManifest:
    inputs = {str(p): serialize.sha256_file(p) for p in input_paths}
    return RunManifest(command=list(sys.argv[1:]) or [args.command],
                       inputs=inputs, seed=seed, n_draws=n_draws)


def _load_table(args, spec):
    mode = "severity" if spec.is_severity else "frequency"
    labels = spec.outcomes if spec.is_severity else None
    table = load_csv(args.data, mode, args.outcome_column, labels)
    if table.n_dropped:
        print(f"note: dropped {table.n_dropped} rows with missing fields")
    return table


def cmd_fit(args) -> int:
    spec = load_spec(args.spec)
    table = _load_table(args, spec)
    settings = _settings(args)
    if spec.is_mixed and args.draws is None:
        raise ValueError("mixed families require --draws")
    if spec.family == "mnl":
        fit = fit_mnl(table, spec, settings)
    elif spec.family == "mixed_mnl":
        fit = fit_mixed_mnl(table, spec, settings, n_draws=args.draws,
                            seed=args.seed, skip=args.skip, shift=args.shift)
    elif spec.family == "nb":
        fit = fit_nb(table, spec, settings)
    else:
        fit = fit_mixed_nb(table, spec, settings, n_draws=args.draws,
                           seed=args.seed, skip=args.skip, shift=args.shift)
    text = fit_table_text(fit)
    with open(f"{args.out}.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    serialize.write_json(f"{args.out}.json", fit.to_dict())
    _manifest(args, [args.data, args.spec],
              seed=args.seed if spec.is_mixed else None,
              n_draws=args.draws).write(f"{args.out}.manifest.json")
    print(text, end="")
    return 0 if fit.converged else 1


def cmd_effects(args) -> int:
    with open(args.fit, "r", encoding="utf-8") as fh:
        fit = FitResult.from_dict(json.load(fh))
    if fit.spec is None:
        raise ValueError("fit file carries no model spec")
    mode = "severity" if fit.spec.is_severity else "frequency"
    labels = fit.spec.outcomes if fit.spec.is_severity else None
    table = load_csv(args.data, mode, args.outcome_column, labels)
    variables = [v.strip() for v in args.vars.split(",")] if args.vars else None

    family = fit.spec.family
    if args.type == "elasticity":
        if family == "mnl":
            report = elasticities(fit, table, variables)
        elif family == "mixed_mnl":
            report = mixed_effects(fit, table, variables, pseudo=False)
        else:
            raise ValueError("elasticities apply to severity fits; "
                             "use --type marginal for count models")
    elif args.type == "pseudo":
        if family == "mnl":
            report = pseudo_elasticities(fit, table, variables)
        elif family == "mixed_mnl":
            report = mixed_effects(fit, table, variables, pseudo=True)
        else:
            raise ValueError("pseudo-elasticities apply to severity fits")
    else:
        if not fit.spec.is_frequency:
            raise ValueError("marginal effects apply to count fits")
        report = marginal_effects(fit, table, variables)

    report.to_csv(f"{args.out}.csv")
    serialize.write_json(f"{args.out}.json", report.to_dict())
    _manifest(args, [args.fit, args.data],
              seed=fit.seed, n_draws=fit.n_draws).write(f"{args.out}.manifest.json")
    width = max((len(r.variable) for r in report.rows), default=8) + 2
    print(f"{report.effect_type} ({report.n_obs} observations)")
    for r in report.rows:
        label = f"{r.variable:<{width}}"
        if r.target:
            label += f"{r.target:<14}{r.outcome:<14}{r.kind:<8}"
        mark = "  [elastic]" if r.elastic and report.effect_type == "elasticity" else ""
        print(f"  {label}{r.value: .4g}{mark}")
    return 0


def cmd_lrtest(args) -> int:
    spec = load_spec(args.spec)
    table = _load_table(args, spec)
    settings = _settings(args)
    if args.mc:
        result = mc_null_distribution(
            table, spec, args.flag, replicates=args.mc, seed=args.seed,
            bins=args.bins, settings=settings, n_draws=args.draws,
            plus_one=args.plus_one)
    else:
        result = lr_test(table, spec, args.flag, settings=settings,
                         n_draws=args.draws)
    serialize.write_json(f"{args.out}.json", result.to_dict())
    if result.histogram_edges is not None:
        result.write_histogram_csv(f"{args.out}.hist.csv")
    _manifest(args, [args.data, args.spec],
              seed=args.seed if args.mc else None,
              n_draws=args.draws).write(f"{args.out}.manifest.json")

    print(f"pooling test on {result.flag_column!r} ({result.family})")
    print(f"  ll pooled   {result.pooled.ll:.2f}  ({result.pooled.n_obs} obs)")
    print(f"  ll subset A {result.subset_a.ll:.2f}  ({result.subset_a.n_obs} obs)")
    print(f"  ll subset B {result.subset_b.ll:.2f}  ({result.subset_b.n_obs} obs)")
    print(f"  X2 = {result.x2:.2f}, dof = {result.dof}")
    print(f"  asymptotic p = {result.p_asymptotic:.4f} "
          f"(5% critical value {result.critical_value_05:.2f})")
    if result.p_mc is not None:
        print(f"  Monte Carlo p = {result.p_mc:.4f} "
              f"({result.replicates_kept} replicates kept, "
              f"{result.replicates_dropped} dropped)")
    return 0 if result.all_converged else 1


def cmd_influence(args) -> int:
    spec = load_spec(args.spec)
    table = _load_table(args, spec)
    profile = search_influence(table, spec, args.distance, args.dmin,
                               args.dmax, args.step, settings=_settings(args))
    profile.to_csv(f"{args.out}.csv")
    serialize.write_json(f"{args.out}.json", profile.to_dict())
    _manifest(args, [args.data, args.spec]).write(f"{args.out}.manifest.json")
    print(f"influence search over [{args.dmin}, {args.dmax}] step {args.step}")
    print(f"  best cap D* = {profile.d_star:g}")
    print(f"  influence segment length = {profile.segment_length:g}")
    if profile.flat:
        print("  WARNING: profile is flat; distance not identified")
    return 0


def cmd_simulate(args) -> int:
    with open(args.dgp, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    if args.n is not None:
        d["n"] = args.n
    if args.seed is not None:
        d["seed"] = args.seed
    config = DgpConfig.from_dict(d)
    table = generate(config)
    table.to_csv(f"{args.out}.csv", outcome_column=args.outcome_column)
    _manifest(args, [args.dgp], seed=config.seed).write(f"{args.out}.manifest.json")
    print(f"wrote {table.n_rows} rows to {args.out}.csv "
          f"(family {config.spec.family}, seed {config.seed})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crashmle",
        description="Maximum-likelihood models for accident severity and frequency")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--data", required=True, help="observations CSV")
        p.add_argument("--spec", required=True, help="model spec file")
        p.add_argument("--out", required=True, help="output path prefix")
        p.add_argument("--outcome-column", default="outcome")
        p.add_argument("--settings", help="optimizer settings JSON")

    p = sub.add_parser("fit", help="estimate a model")
    add_common(p)
    p.add_argument("--draws", type=int, help="Halton draws (mixed families)")
    p.add_argument("--seed", type=int, default=0, help="draw-shift seed")
    p.add_argument("--skip", type=int, default=10, help="Halton burn-in")
    p.add_argument("--shift", action="store_true",
                   help="apply a seeded Cranley-Patterson shift to the draws")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("effects", help="elasticities or marginal effects of a fit")
    p.add_argument("--fit", required=True, help="fit result JSON")
    p.add_argument("--data", required=True, help="observations CSV")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--outcome-column", default="outcome")
    p.add_argument("--type", required=True,
                   choices=["elasticity", "pseudo", "marginal"])
    p.add_argument("--vars", help="comma-separated variables (default: all)")
    p.set_defaults(func=cmd_effects)

    p = sub.add_parser("lrtest", help="parameter-transferability test")
    add_common(p)
    p.add_argument("--flag", required=True, help="0/1 column defining the split")
    p.add_argument("--mc", type=int, metavar="REPLICATES",
                   help="add a Monte Carlo null distribution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=50, help="histogram bins")
    p.add_argument("--plus-one", action="store_true",
                   help="use the (k+1)/(n+1) p-value estimate")
    p.add_argument("--draws", type=int, help="Halton draws (mixed families)")
    p.set_defaults(func=cmd_lrtest)

    p = sub.add_parser("influence", help="influence-distance grid search")
    add_common(p)
    p.add_argument("--distance", required=True, help="distance column to cap")
    p.add_argument("--dmin", type=float, required=True)
    p.add_argument("--dmax", type=float, required=True)
    p.add_argument("--step", type=float, required=True)
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("simulate", help="generate synthetic data")
    p.add_argument("--dgp", required=True, help="data-generating config JSON")
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--outcome-column", default="outcome")
    p.add_argument("--n", type=int, help="override the config sample size")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, OptimizationError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
