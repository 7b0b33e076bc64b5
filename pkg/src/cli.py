"""
Command-line interface: fit, summarize, elicit, prior-k, simulate, baseline,
diag, describe and gini-prior.

Exit codes: 0 success, 1 numerical or sampling failure, 2 usage or validation error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from baseline import generate_baseline_report, kmodes_restarts, best_restart, restart_ari_summary
from config import configure_logging, load_run_config, sampler_config, settings
from data import load_dataset, load_labels
from gibbs import run_chains
from hig import default_params_list, gini_prior_montecarlo
from mixture import elicit_gamma, prior_k_distribution, prior_k_pmf
from models import (CategoricalDataset, CenteringStatistic, ChainTrace, ConfigurationError,
                    HIGParams, InputValidationError, ModelConfig, NumericalError, Partition,
                    RunConfig, StudyOptions)
from numerics import spawn_generator
from simharness import StudyRunner, generate_study_report
from storage import RunStore
from summary import (adjusted_rand_index, conditional_param_summary, k_distribution_table,
                     point_estimate_vi, silhouette_hamming, similarity_matrix)

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_USAGE = 2


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _parse_pair(text: str) -> Tuple[float, float]:
    try:
        v, w = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected V,W but got {text!r}") from None
    return v, w


def parse_hig_modality(text: str) -> Tuple[int, Tuple[float, float]]:
    """'M=V,W' -> (M, (V, W))"""
    key, _, pair = text.partition("=")
    try:
        m = int(key)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M=V,W with integer M, got {text!r}") from None
    return m, _parse_pair(pair)


def parse_hig_variable(text: str) -> Tuple[str, Tuple[float, float]]:
    """'NAME=V,W' -> (NAME, (V, W))"""
    name, sep, pair = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=V,W, got {text!r}")
    return name, _parse_pair(pair)


def _add_dataset_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("dataset", nargs=None if required else "?", help="Delimited text file")
    parser.add_argument("--delimiter", default=None, help="Field delimiter (default ',')")
    parser.add_argument("--no-header", action="store_true", help="First line is data")
    parser.add_argument("--exclude", action="append", default=None, metavar="COLUMN",
                        help="Column to drop before clustering (repeatable)")
    parser.add_argument("--truth-column", default=None, help="Column holding reference classes")


def _add_hig_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--hig", action="append", type=parse_hig_modality, default=None,
                        metavar="M=V,W", help="HIG (v,w) for variables with M modalities")
    parser.add_argument("--hig-var", action="append", type=parse_hig_variable, default=None,
                        metavar="NAME=V,W", help="HIG (v,w) for one variable")


def _load_data(path: str, delimiter: Optional[str], header: bool, exclude: Optional[List[str]],
               truth_column: Optional[str]) -> Tuple[CategoricalDataset, Optional[Partition]]:
    if not Path(path).is_file():
        raise ConfigurationError(f"Dataset not found: {path}")
    loaded = load_dataset(path, delimiter=delimiter or ",", header=header,
                          exclude_columns=exclude or (), truth_column=truth_column)
    if truth_column is not None:
        return loaded
    return loaded, None


def _print_frame(frame: pd.DataFrame) -> None:
    sys.stdout.write(frame.to_csv(index=False, float_format="%.6g", lineterminator="\n"))


# ---------------------------------------------------------------------------
# fit / summarize
# ---------------------------------------------------------------------------

def fit_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Flag values as a nested override dict; unset flags are None and lose to the file"""
    return {
        "dataset": {
            "path": args.dataset,
            "delimiter": args.delimiter,
            "header": False if args.no_header else None,
            "exclude_columns": args.exclude,
            "truth_column": args.truth_column,
        },
        "model": {
            "gamma": args.gamma,
            "lambda": args.lambda_,
            "k_target": args.k_target,
            "k_statistic": args.statistic,
            "shared_sigma": True if args.shared_sigma else None,
            "hig_by_modality": dict(args.hig) if args.hig else None,
            "hig_by_variable": dict(args.hig_var) if args.hig_var else None,
        },
        "sampler": {
            "iters": args.iters,
            "burnin": args.burnin,
            "thin": args.thin,
            "seed": args.seed,
            "chains": args.chains,
            "workers": args.workers,
            "summary_iters": args.summary_iters,
        },
        "output_dir": args.out,
    }


def resolve_model_config(run_config: RunConfig, data: CategoricalDataset) -> ModelConfig:
    """Per-variable HIG priors from the defaults table, gamma elicited when k_target is set"""
    options = run_config.model
    gamma = options.gamma
    if options.k_target is not None:
        gamma = elicit_gamma(data.n, options.lambda_, options.k_target, options.k_statistic)
    return ModelConfig.for_dataset(
        data, gamma=gamma, lambda_=options.lambda_,
        hig_by_modality=options.hig_by_modality, hig_by_variable=options.hig_by_variable,
        shared_sigma=options.shared_sigma, shared_sigma_prior=options.shared_sigma_prior,
        mh_proposal_sd=options.mh_proposal_sd,
    )


def default_run_dir(run_config: RunConfig) -> Path:
    stem = Path(run_config.dataset.path).stem if run_config.dataset.path else "run"
    return Path(settings.runs_dir) / f"{stem}_seed{run_config.sampler.seed}"


def resolve_max_candidates(value: Optional[int]) -> Optional[int]:
    """Candidate cap for the VI point estimate, falling back to settings; 0 means no cap"""
    limit = settings.default_max_candidates if value is None else value
    return limit if limit > 0 else None


def summarize_run(store: RunStore, traces: List[ChainTrace], data: CategoricalDataset,
                  model_config: ModelConfig, run_config: RunConfig,
                  truth: Optional[Partition] = None,
                  max_candidates: Optional[int] = None) -> Dict[str, Any]:
    """Write psm, partition, clusters, k distribution and summary for a run"""
    pooled = ChainTrace.concatenate(traces)
    store.save_psm(similarity_matrix(pooled))
    estimate = point_estimate_vi(pooled, resolve_max_candidates(max_candidates))
    store.save_partition(estimate)

    rng = spawn_generator(run_config.sampler.seed, sampler_config.SUMMARY_STREAM_KEY)
    clusters = conditional_param_summary(data, estimate, model_config,
                                         run_config.sampler.summary_iters, rng)
    silhouette = None
    if estimate.K >= 2:
        silhouette = silhouette_hamming(data, estimate)
        for cluster, mean in zip(clusters, silhouette.cluster_means):
            cluster.silhouette_mean = float(mean)
    store.save_clusters(clusters)

    k_table = k_distribution_table(pooled, prior_k_pmf(data.n, model_config))
    store.save_k_distribution(k_table)

    k_values = np.asarray(pooled.k)
    summary = {
        "K_hat": estimate.K,
        "cluster_sizes": estimate.sizes.tolist(),
        "chains": len(traces),
        "recorded": [t.recorded for t in traces],
        "posterior_K_mean": float(k_values.mean()),
        "posterior_K_mode": int(np.bincount(k_values).argmax()),
        "gamma": float(model_config.gamma),
        "lambda": float(model_config.lambda_),
        "shared_sigma": bool(model_config.shared_sigma),
        "silhouette_mean": None if silhouette is None else silhouette.overall,
        "ari": None if truth is None else adjusted_rand_index(estimate, truth),
    }
    store.save_summary(summary)
    logger.info("run_summarized", run_dir=str(store.root), K_hat=estimate.K, ari=summary["ari"])
    return summary


def cmd_fit(run_config: RunConfig, max_candidates: Optional[int] = None) -> Path:
    """Sample chains and write every run artifact"""
    if not run_config.dataset.path:
        raise ConfigurationError("No dataset given (positional argument or dataset.path in --config)")
    dataset = run_config.dataset
    data, truth = _load_data(dataset.path, dataset.delimiter, dataset.header,
                             dataset.exclude_columns, dataset.truth_column)
    model_config = resolve_model_config(run_config, data)

    run_dir = Path(run_config.output_dir) if run_config.output_dir else default_run_dir(run_config)
    store = RunStore(run_dir, create=True)
    store.save_config({"run": run_config.echo(), "model": model_config.echo()})
    store.save_dataset(data)

    sampler = run_config.sampler
    logger.info("fit_started", run_dir=str(run_dir), n=data.n, p=data.p, chains=sampler.chains,
                gamma=model_config.gamma, lambda_=model_config.lambda_)
    traces = run_chains(data, model_config, sampler.iters, sampler.burnin, sampler.thin,
                        sampler.seed, sampler.chains, sampler.workers)
    for index, trace in enumerate(traces):
        store.save_trace(trace, index)

    summary = summarize_run(store, traces, data, model_config, run_config, truth, max_candidates)
    print(json.dumps({"run_dir": str(run_dir), **summary}, indent=2, sort_keys=True))
    return run_dir


def cmd_summarize(run_dir: str, max_candidates: Optional[int] = None) -> Dict[str, Any]:
    """Recompute summaries from a run directory without re-sampling"""
    store = RunStore(run_dir)
    stored = store.load_config()
    run_config = RunConfig.parse_obj(stored["run"])
    model_config = ModelConfig.parse_obj(stored["model"])
    dataset = run_config.dataset
    data, truth = _load_data(dataset.path, dataset.delimiter, dataset.header,
                             dataset.exclude_columns, dataset.truth_column)
    if store.load_json("dataset.json") != json.loads(json.dumps(data.describe())):
        raise ConfigurationError(f"Dataset at {dataset.path} no longer matches {run_dir}/dataset.json")
    summary = summarize_run(store, store.load_traces(), data, model_config, run_config,
                            truth, max_candidates)
    print(json.dumps({"run_dir": str(store.root), **summary}, indent=2, sort_keys=True))
    return summary


def _handle_fit(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config, fit_overrides(args))
    cmd_fit(run_config, args.max_candidates)
    return EXIT_OK


def _handle_summarize(args: argparse.Namespace) -> int:
    cmd_summarize(args.run_dir, args.max_candidates)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Prior tools
# ---------------------------------------------------------------------------

def cmd_elicit(n: int, lambda_: float, k_target: int, statistic: str) -> float:
    gamma = elicit_gamma(n, lambda_, k_target, statistic)
    prior = prior_k_distribution(n, gamma, lambda_)
    print(f"gamma={gamma:.6f}")
    print(f"prior_K_mean={prior.mean:.4f}")
    print(f"prior_K_mode={prior.mode}")
    return gamma


def cmd_prior_k(n: int, gamma: float, lambda_: float, out: Optional[str] = None) -> pd.DataFrame:
    prior = prior_k_distribution(n, gamma, lambda_)
    frame = pd.DataFrame({"K": prior.k_values, "probability": prior.probabilities})
    print(f"# mean={prior.mean:.4f} mode={prior.mode} defect={prior.defect:.2e}")
    if out:
        frame.to_csv(out, index=False, float_format="%.10g", lineterminator="\n")
    _print_frame(frame)
    return frame


def cmd_gini_prior(modality_counts: Sequence[int], hig: Optional[List[Tuple[int, Tuple[float, float]]]],
                   draws: int, seed: int, out: Optional[str] = None) -> pd.DataFrame:
    """Monte Carlo prior of the normalized Gini index for choosing (v, w)"""
    overrides = dict(hig or [])
    params: List[HIGParams] = []
    for m, default in zip(modality_counts, default_params_list(modality_counts)):
        if m in overrides:
            v, w = overrides[m]
            params.append(HIGParams(v=v, w=w, m=m))
        else:
            params.append(default)
    values = gini_prior_montecarlo(params, draws, spawn_generator(seed, 0))
    frame = pd.DataFrame({"draw": np.arange(1, draws + 1), "gini": values})
    if out:
        frame.to_csv(out, index=False, float_format="%.10g", lineterminator="\n")
    quantiles = pd.DataFrame({"quantile": [0.05, 0.25, 0.5, 0.75, 0.95]})
    quantiles["gini"] = np.quantile(values, quantiles["quantile"])
    print(f"# draws={draws} mean={values.mean():.4f}")
    _print_frame(quantiles)
    return frame


def _handle_elicit(args: argparse.Namespace) -> int:
    cmd_elicit(args.n, args.lambda_, args.k, args.statistic)
    return EXIT_OK


def _handle_prior_k(args: argparse.Namespace) -> int:
    cmd_prior_k(args.n, args.gamma, args.lambda_, args.out)
    return EXIT_OK


def _handle_gini_prior(args: argparse.Namespace) -> int:
    if args.dataset:
        data, _ = _load_data(args.dataset, args.delimiter, not args.no_header, args.exclude, None)
        modality_counts = data.modality_counts.tolist()
    elif args.m:
        modality_counts = args.m
    else:
        raise ConfigurationError("gini-prior needs --m or --dataset")
    cmd_gini_prior(modality_counts, args.hig, args.draws, args.seed, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Simulation and baseline
# ---------------------------------------------------------------------------

def cmd_simulate(scenario: int, replicates: int, seed: int, workers: int, options: StudyOptions,
                 record_timings: bool = True, out: Optional[str] = None) -> str:
    runner = StudyRunner(options, workers, record_timings)
    report = generate_study_report(runner.run_study(scenario, replicates, seed))
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return report


def cmd_baseline(data: CategoricalDataset, K: int, restarts: int, max_iter: Optional[int], seed: int,
                 truth: Optional[Partition] = None, out: Optional[str] = None) -> Dict[str, Any]:
    results = kmodes_restarts(data, K, restarts, max_iter, spawn_generator(seed, 0))
    best = best_restart(results)
    if out:
        store = RunStore(out, create=True)
        store.save_partition(best.partition)
    print(generate_baseline_report(results, truth))
    return restart_ari_summary(results, truth) if truth is not None else {"best_cost": best.cost}


def _handle_simulate(args: argparse.Namespace) -> int:
    overrides = {
        "iters": args.iters, "burnin": args.burnin, "thin": args.thin,
        "lambda": args.lambda_, "gamma": args.gamma,
        "min_separation": args.min_separation, "kmodes_restarts": args.kmodes_restarts,
        "max_candidates": args.max_candidates,
    }
    options = StudyOptions.parse_obj({k: v for k, v in overrides.items() if v is not None})
    cmd_simulate(args.scenario, args.replicates, args.seed, args.workers, options,
                 not args.no_timings, args.out)
    return EXIT_OK


def _handle_baseline(args: argparse.Namespace) -> int:
    data, truth = _load_data(args.dataset, args.delimiter, not args.no_header, args.exclude,
                             args.truth_column)
    if args.truth:
        truth = load_labels(args.truth)
    cmd_baseline(data, args.k, args.restarts, args.max_iter, args.seed, truth, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Inspection
# ---------------------------------------------------------------------------

def cmd_diag(run_dir: str) -> Tuple[pd.DataFrame, Optional[pd.DataFrame]]:
    """Per-chain trace diagnostics and per-cluster heterogeneity indices"""
    store = RunStore(run_dir)
    rows = []
    for index in store.chain_indices():
        trace = store.load_trace(index)
        k_values = np.asarray(trace.k)
        rows.append({
            "chain": index,
            "recorded": trace.recorded,
            "K_mean": float(k_values.mean()),
            "K_mode": int(np.bincount(k_values).argmax()),
            "L_mean": float(np.mean(trace.l)),
            "u_mean": float(np.mean(trace.u)),
            "acceptance_rate": trace.metadata.get("acceptance_rate"),
        })
    chains = pd.DataFrame(rows)
    print("# chains")
    _print_frame(chains)

    clusters = None
    if (store.root / "clusters.json").is_file():
        records = store.load_json("clusters.json")["clusters"]
        clusters = pd.DataFrame([{
            "label": c["label"],
            "size": c["size"],
            "gini": c["gini"],
            "shannon": c["shannon"],
            "epsilon_mean": float(np.mean(c["epsilon_median"])),
            "silhouette_mean": c["silhouette_mean"],
        } for c in records])
        print("# clusters")
        _print_frame(clusters)
    return chains, clusters


def cmd_describe(data: CategoricalDataset, truth: Optional[Partition] = None) -> Dict[str, Any]:
    description = data.describe()
    if truth is not None:
        description["truth_K"] = truth.K
        description["truth_sizes"] = truth.sizes.tolist()
    print(json.dumps(description, indent=2))
    return description


def _handle_diag(args: argparse.Namespace) -> int:
    cmd_diag(args.run_dir)
    return EXIT_OK


def _handle_describe(args: argparse.Namespace) -> int:
    data, truth = _load_data(args.dataset, args.delimiter, not args.no_header, args.exclude,
                             args.truth_column)
    cmd_describe(data, truth)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hammix",
        description="Bayesian clustering of categorical data with mixtures of Hamming distributions")
    parser.add_argument("--log-level", default=None, help="Logging level (default from HAMMIX_LOG_LEVEL)")
    parser.add_argument("--log-file", default=None, help="Also log to this file")
    commands = parser.add_subparsers(dest="command", required=True)
    statistics = [s.value for s in CenteringStatistic]

    fit = commands.add_parser("fit", help="Run the Gibbs sampler and summarize")
    _add_dataset_args(fit, required=False)
    fit.add_argument("--config", default=None, help="JSON run config; flags override it")
    fit.add_argument("--gamma", type=float, default=None)
    fit.add_argument("--lambda", dest="lambda_", type=float, default=None)
    fit.add_argument("--k-target", type=int, default=None, help="Elicit gamma so the prior on K centers here")
    fit.add_argument("--statistic", choices=statistics, default=None)
    fit.add_argument("--iters", type=int, default=None)
    fit.add_argument("--burnin", type=int, default=None)
    fit.add_argument("--thin", type=int, default=None)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--chains", type=int, default=None)
    fit.add_argument("--workers", type=int, default=None)
    fit.add_argument("--shared-sigma", action="store_true", help="One scale per component")
    fit.add_argument("--summary-iters", type=int, default=None)
    fit.add_argument("--max-candidates", type=int, default=None,
                        help="Distinct partitions scored for the VI estimate (0 = all)")
    fit.add_argument("--out", default=None, help="Run directory")
    _add_hig_args(fit)
    fit.set_defaults(handler=_handle_fit)

    summarize = commands.add_parser("summarize", help="Recompute summaries of a run directory")
    summarize.add_argument("run_dir")
    summarize.add_argument("--max-candidates", type=int, default=None,
                        help="Distinct partitions scored for the VI estimate (0 = all)")
    summarize.set_defaults(handler=_handle_summarize)

    elicit = commands.add_parser("elicit", help="gamma centering the prior on K")
    elicit.add_argument("--n", type=int, required=True)
    elicit.add_argument("--lambda", dest="lambda_", type=float, required=True)
    elicit.add_argument("--k", type=int, required=True)
    elicit.add_argument("--statistic", choices=statistics, default=CenteringStatistic.MEAN.value)
    elicit.set_defaults(handler=_handle_elicit)

    prior_k = commands.add_parser("prior-k", help="Prior distribution of the number of clusters")
    prior_k.add_argument("--n", type=int, required=True)
    prior_k.add_argument("--gamma", type=float, required=True)
    prior_k.add_argument("--lambda", dest="lambda_", type=float, required=True)
    prior_k.add_argument("--out", default=None)
    prior_k.set_defaults(handler=_handle_prior_k)

    simulate = commands.add_parser("simulate", help="Simulation study for one scenario")
    simulate.add_argument("--scenario", type=int, required=True, choices=[1, 2, 3, 4])
    simulate.add_argument("--replicates", type=int, default=10)
    simulate.add_argument("--seed", type=int, default=settings.default_seed)
    simulate.add_argument("--workers", type=int, default=settings.workers)
    simulate.add_argument("--iters", type=int, default=None)
    simulate.add_argument("--burnin", type=int, default=None)
    simulate.add_argument("--thin", type=int, default=None)
    simulate.add_argument("--gamma", type=float, default=None)
    simulate.add_argument("--lambda", dest="lambda_", type=float, default=None)
    simulate.add_argument("--min-separation", type=int, default=None)
    simulate.add_argument("--kmodes-restarts", type=int, default=None)
    simulate.add_argument("--max-candidates", type=int, default=None)
    simulate.add_argument("--no-timings", action="store_true", help="Leave the seconds column empty")
    simulate.add_argument("--out", default=None, help="Report file")
    simulate.set_defaults(handler=_handle_simulate)

    baseline = commands.add_parser("baseline", help="K-modes with random restarts")
    _add_dataset_args(baseline)
    baseline.add_argument("--k", type=int, required=True)
    baseline.add_argument("--restarts", type=int, default=100)
    baseline.add_argument("--max-iter", type=int, default=sampler_config.KMODES_MAX_ITER)
    baseline.add_argument("--seed", type=int, default=settings.default_seed)
    baseline.add_argument("--truth", default=None, help="File with reference labels")
    baseline.add_argument("--out", default=None, help="Directory for partition.csv")
    baseline.set_defaults(handler=_handle_baseline)

    diag = commands.add_parser("diag", help="Chain and cluster diagnostics of a run directory")
    diag.add_argument("run_dir")
    diag.set_defaults(handler=_handle_diag)

    describe = commands.add_parser("describe", help="Variables and alphabets of a dataset")
    _add_dataset_args(describe)
    describe.set_defaults(handler=_handle_describe)

    gini = commands.add_parser("gini-prior", help="Prior Gini index implied by HIG hyperparameters")
    _add_dataset_args(gini, required=False)
    gini.add_argument("--m", type=int, nargs="+", default=None, help="Modality counts")
    gini.add_argument("--draws", type=int, default=10000)
    gini.add_argument("--seed", type=int, default=settings.default_seed)
    gini.add_argument("--out", default=None, help="CSV of (draw, gini)")
    gini.add_argument("--hig", action="append", type=parse_hig_modality, default=None, metavar="M=V,W")
    gini.set_defaults(handler=_handle_gini_prior)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)
    try:
        return args.handler(args)
    except (InputValidationError, ValidationError, FileNotFoundError) as e:
        logger.error("command_rejected", command=args.command, error=str(e))
        print(f"hammix {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        logger.error("command_failed", command=args.command, error=str(e))
        print(f"hammix {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
