# main.py
"""
mvcar - multivariate CAR disease mapping.

Usage:
    python main.py fit --adj g.txt --data d.csv --model pmcar --out fit.json
    python main.py fit --adj g.txt --data d.csv --mcmc --iters 50000 --burnin 10000 --chains 2
    python main.py simulate --adj g.txt --model mmodel --params p.json --expected 50 --seed 7 --out sim.csv
    python main.py bounds --adj g.txt
    python main.py transform --fit fit.json --out natural.json
"""
import argparse
import logging
import sys

import numpy as np

from config import ALPHA_MAX, ALPHA_MIN, DEFAULT_SEED, EXPLORE_CHOICES, MODEL_CHOICES, build_fit_config, read_config_file
from data.loader import load_count_data, load_edge_list, load_params, write_count_data
from errors import (
    ConstraintDegeneracy,
    InvalidHyperparameters,
    InvalidState,
    MvcarError,
    NotPositiveDefinite,
    OptimizationFailure,
    ValidationError,
)
from inference.mcmc import mcmc_fit
from inference.summaries import fit
from models.latent import LatentModel, sample_effects
from models.likelihood import CountData
from models.transforms import internal_names, theta_dim
from output.report import (
    print_bounds,
    print_fit_summary,
    print_transform,
    read_result,
    result_document,
    transform_document,
    write_document,
)
from spatial.car import alpha_bounds
from spatial.graph import require_neighbors

logger = logging.getLogger("mvcar")

NUMERICAL_ERRORS = (
    OptimizationFailure,
    NotPositiveDefinite,
    ConstraintDegeneracy,
    InvalidState,
    InvalidHyperparameters,
)


def _csv_list(value, cast=str):
    return tuple(cast(part.strip()) for part in value.split(",") if part.strip())


def _mcmc_section(result, model, data, config, progress):
    chain = mcmc_fit(
        model,
        data,
        n_iter=config.iters,
        burnin=config.burnin,
        seed=config.seed,
        chains=config.chains,
        theta_init=result.theta_mode,
        proposal_cov=np.linalg.inv(result.hessian),
        covariates=config.covariates,
        progress=progress,
        workers=config.workers,
    )
    return {
        "iters": config.iters,
        "burnin": config.burnin,
        "chains": config.chains,
        "acceptance": chain.acceptance,
        "hyper_internal": [
            {"parameter": name, "mean": m, "sd": s}
            for name, m, s in zip(internal_names(model), chain.theta_mean(), chain.theta_sd())
        ],
        "criteria": chain.criteria,
    }


def cmd_fit(args):
    file_overrides = read_config_file(args.config) if args.config else {}
    config = build_fit_config(file_overrides, {
        "model": args.model,
        "n_variables": args.k,
        "alpha_min": args.alpha_min,
        "alpha_max": args.alpha_max,
        "explore": args.explore,
        "hessian_step": args.hessian_step,
        "seed": args.seed,
        "draws": args.draws,
        "workers": args.workers,
        "covariates": _csv_list(args.covariates) if args.covariates is not None else None,
        "init": _csv_list(args.init, float) if args.init is not None else None,
        "mcmc": True if args.mcmc else None,
        "iters": args.iters,
        "burnin": args.burnin,
        "chains": args.chains,
        "out": args.out,
    })

    graph = load_edge_list(args.adj)
    data = load_count_data(args.data, graph)
    if config.n_variables is not None and config.n_variables != data.K:
        raise ValidationError(f"data has {data.K} variables but {config.n_variables} were configured")
    model = LatentModel(config.model, data.K, graph, alpha_range=(config.alpha_min, config.alpha_max))
    if config.init is not None and len(config.init) != theta_dim(model):
        raise ValidationError(f"--init needs {theta_dim(model)} values for {config.model} with K={data.K}")

    logger.info("fitting %s with K=%d on %d regions", config.model, data.K, data.I)
    result = fit(model, data, config)
    if config.mcmc:
        result.mcmc = _mcmc_section(result, model, data, config, args.progress)

    doc = result_document(result, data, config, include_timings=args.timings)
    write_document(config.out, doc)
    print_fit_summary(doc)
    for name, seconds in result.timings.items():
        logger.info("time %s: %.2fs", name, seconds)
    print(f"\nResult written to {config.out}")


def cmd_simulate(args):
    graph = load_edge_list(args.adj)
    layout, theta, intercepts = load_params(args.params, args.model, (args.alpha_min, args.alpha_max))
    if args.expected <= 0:
        raise ValidationError("--expected must be positive")
    model = LatentModel(layout.kind, layout.K, graph, alpha_range=layout.alpha_range)

    rng = np.random.default_rng(args.seed)
    effects = sample_effects(model, theta, rng)
    expected = np.full((graph.n_regions, model.K), float(args.expected))
    eta = np.log(expected) + intercepts[None, :] + effects
    observed = rng.poisson(np.exp(eta)).astype(float)

    labels = _csv_list(args.variables) if args.variables else None
    data = CountData(observed=observed, expected=expected, variable_labels=labels)
    write_count_data(args.out, data)
    print(f"Simulated {graph.n_regions} regions x {model.K} variables ({model.kind.value}) -> {args.out}")


def cmd_bounds(args):
    graph = load_edge_list(args.adj)
    require_neighbors(graph)
    print_bounds(*alpha_bounds(graph))


def cmd_transform(args):
    doc = read_result(args.fit)
    alpha_range = None
    if args.alpha_min is not None or args.alpha_max is not None:
        lo, hi = doc["meta"]["alpha_range"]
        alpha_range = (
            lo if args.alpha_min is None else args.alpha_min,
            hi if args.alpha_max is None else args.alpha_max,
        )
    natural = transform_document(doc, kind=args.model, alpha_range=alpha_range)
    if args.out:
        write_document(args.out, natural)
    print_transform(natural, doc["meta"].get("variables"))


def build_parser():
    parser = argparse.ArgumentParser(prog="mvcar", description="Multivariate CAR models for disease mapping")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a latent model with the Laplace engine")
    p.add_argument("--adj", required=True, help="adjacency file ('regions: I' then 'i j' lines)")
    p.add_argument("--data", required=True, help="data CSV")
    p.add_argument("--config", help="key=value file with fit settings")
    p.add_argument("--model", choices=MODEL_CHOICES)
    p.add_argument("--k", type=int, help="expected number of variables")
    p.add_argument("--alpha-min", type=float)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--explore", choices=EXPLORE_CHOICES)
    p.add_argument("--hessian-step", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int, help="mixture draws for quantiles, DIC and WAIC")
    p.add_argument("--workers", type=int)
    p.add_argument("--covariates", help="comma-separated covariate names (default: all cov_* columns)")
    p.add_argument("--init", help="comma-separated starting theta on the internal scale")
    p.add_argument("--mcmc", action="store_true", help="also run the MCMC cross-validator")
    p.add_argument("--iters", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--progress", action="store_true", help="show MCMC progress bars")
    p.add_argument("--timings", action="store_true", help="store wall-clock timings in the result file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="draw a dataset from a latent model")
    p.add_argument("--adj", required=True)
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--params", required=True, help="JSON with 'theta' or natural-scale parameters")
    p.add_argument("--expected", type=float, required=True, help="constant expected count E")
    p.add_argument("--alpha-min", type=float, default=ALPHA_MIN)
    p.add_argument("--alpha-max", type=float, default=ALPHA_MAX)
    p.add_argument("--variables", help="comma-separated variable labels")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="print the admissible alpha interval")
    p.add_argument("--adj", required=True)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("transform", help="natural-scale summaries of a fit result")
    p.add_argument("--fit", required=True)
    p.add_argument("--model", choices=MODEL_CHOICES, help="must match the stored model")
    p.add_argument("--alpha-min", type=float)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transform)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (MvcarError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
