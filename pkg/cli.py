#!/usr/bin/env python3
"""
Parent Discovery - Command Line Interface

    python cli.py discover data.csv --env-col env --target-col y --gamma 0.5 --out-dir out/
    python cli.py replicate --mode A --datasets 10 --seed 7 --out-dir out/
    python cli.py simulate --d 6 --envs 3 --n 300 --seed 1 --out-dir out/
    python cli.py enumerate --d 8 --max-set-size 5

Exit status: 0 success, 2 input error, 3 numerical failure, 1 unexpected.
"""

import argparse
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from CandidateSearchSystem import (
    LARGE_D_SET_CAP,
    SearchConfig,
    count_tuples,
    enumerate_tuples,
    run_search,
    write_candidate_report,
)
from DatasetIngestion import RunManifest, file_digest, ingest_csv
from DiscoveryErrors import EXIT_INPUT_ERROR, EXIT_OK, EXIT_UNEXPECTED, DiscoveryError, InvalidArgumentError
from ExperimentHarness import DEFAULT_GAMMAS, ExperimentConfig, run_experiment, write_plot_data, write_report_json
from RuntimeSettings import RuntimeSettings, configure_logging
from StructuralCausalModel import (
    attach_parameters,
    build_random_dag,
    export_samples_csv,
    make_environments,
    sample_environment,
    scm_to_json,
    spawn_rngs,
)
from VotingSystem import cutoff, tally, top_k_report, vote_gap, write_tally_csv

PROCEDURE_FLAGS = {"imp": "definition", "imp-inv": "invariance", "both": "both"}


def _validated(model, **kwargs):
    try:
        return model(**kwargs)
    except ValidationError as exc:
        messages = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        raise InvalidArgumentError(f"invalid {model.__name__}: {messages}") from exc


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# discover


def cmd_discover(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    features = [c.strip() for c in args.features.split(",")] if args.features else None
    dataset = ingest_csv(args.csv, args.env_col, args.target_col, features, args.max_rows_per_env)
    for gamma in args.gamma:
        if not 0.0 <= gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must lie in [0, 1], got {gamma}")
    config = _validated(
        SearchConfig,
        alpha=args.alpha,
        max_set_size=args.max_set_size,
        procedure=PROCEDURE_FLAGS[args.procedure],
        score_keep_fraction=args.score_keep_fraction,
        seed=args.seed,
        n_jobs=settings.n_jobs,
    )
    out = _out_dir(args.out_dir)
    candidates = run_search(dataset.samples, config, dataset.feature_names)
    outputs = [write_candidate_report(candidates, out / "candidates.jsonl").name]

    procedures = config.procedures()
    lines = []
    for procedure in procedures:
        votes = tally(candidates.by_procedure(procedure))
        suffix = "" if len(procedures) == 1 else f"_{procedure}"
        outputs.append(write_tally_csv(votes, out / f"votes{suffix}.csv", dataset.feature_names).name)
        top = dataset.feature_names[top_k_report(votes, 1)[0]] if votes.q else "-"
        for gamma in args.gamma:
            estimate = [dataset.feature_names[j] for j in sorted(cutoff(votes, gamma))]
            lines.append(f"procedure={procedure} gamma={gamma:g} q={votes.q} estimate={','.join(estimate)}")
        advice = vote_gap(votes)
        print(f"{procedure}: q={votes.q} top feature={top}")
        if advice is not None:
            names = ",".join(dataset.feature_names[j] for j in sorted(advice.above))
            print(f"  largest vote gap {advice.gap} above {{{names}}} (gamma <= {advice.suggested_gamma:.3f})")
    (out / "estimate.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append("estimate.txt")
    for line in lines:
        print(line)

    RunManifest(
        command="discover",
        config={
            **config.model_dump(mode="json", exclude={"n_jobs"}),
            "gamma": list(args.gamma),
            "env_column": args.env_col,
            "target_column": args.target_col,
            "features": list(dataset.feature_names),
            "max_rows_per_env": args.max_rows_per_env,
        },
        seed=args.seed,
        input_path=str(args.csv),
        input_digest=file_digest(args.csv),
        created_at=settings.timestamp(),
        outputs=sorted(outputs),
    ).write(out / "manifest.json")
    return EXIT_OK


# replicate


def cmd_replicate(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    procedure = PROCEDURE_FLAGS[args.procedure]
    config = _validated(
        ExperimentConfig,
        n_datasets=args.datasets,
        n_envs=args.envs,
        n_per_env=args.n,
        d=args.d,
        n_parents_y=args.n_parents,
        n_children_y=args.n_children,
        edge_prob=args.edge_prob,
        n_x_interventions=args.x_interventions,
        gammas=tuple(args.gamma),
        procedures=("definition", "invariance") if procedure == "both" else (procedure,),
        alpha=args.alpha,
        max_set_size=args.max_set_size if args.max_set_size is not None else min(LARGE_D_SET_CAP, args.d),
        score_keep_fraction=args.score_keep_fraction,
        seed=args.seed,
        n_jobs=settings.n_jobs,
    )
    out = _out_dir(args.out_dir)
    report = run_experiment(config, args.mode)
    outputs = [write_report_json(report, out / "report.json").name]
    outputs += [p.name for p in write_plot_data(report, out).values()]

    for name, curve in report.topk_curve.items():
        print(f"{name}: P(PA(Y) in top {curve[0][0]}) = {curve[0][1]:.3f}")
        for gamma in config.gammas:
            print(
                f"  gamma={gamma:g} success={report.success_prob[name][gamma]:.3f} "
                f"subset={report.subset_prob[name][gamma]:.3f}"
            )
    if report.n_failed:
        print(f"{report.n_failed} dataset(s) failed; see datasets.csv")

    RunManifest(
        command="replicate",
        config={**config.model_dump(mode="json", exclude={"n_jobs"}), "mode": args.mode},
        seed=args.seed,
        created_at=settings.timestamp(),
        outputs=sorted(outputs),
    ).write(out / "manifest.json")
    return EXIT_OK


# simulate


def cmd_simulate(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    graph_rng, param_rng, env_rng, sample_rng = spawn_rngs(args.seed, 4)
    dag = build_random_dag(args.d, args.edge_prob, args.n_parents, args.n_children, graph_rng)
    params = attach_parameters(dag, args.coeff_low, args.coeff_high, param_rng)
    specs = make_environments(
        params, args.envs, args.mode, args.perturb_low, args.perturb_high, args.x_interventions, env_rng
    )
    samples = [sample_environment(params, spec, args.n, sample_rng) for spec in specs]

    out = _out_dir(args.out_dir)
    (out / "scm.json").write_text(scm_to_json(params, specs) + "\n", encoding="utf-8")
    export_samples_csv(samples, out / "data.csv")
    parents = ",".join(f"x{j + 1}" for j in dag.parents)
    children = ",".join(f"x{j + 1}" for j in dag.children)
    print(f"PA(Y) = {{{parents}}}  CH(Y) = {{{children}}}")

    RunManifest(
        command="simulate",
        config={
            key: getattr(args, key)
            for key in ("d", "n_parents", "n_children", "edge_prob", "envs", "n", "mode", "coeff_low",
                        "coeff_high", "perturb_low", "perturb_high", "x_interventions")
        },
        seed=args.seed,
        created_at=settings.timestamp(),
        outputs=["data.csv", "scm.json"],
    ).write(out / "manifest.json")
    return EXIT_OK


# enumerate


def cmd_enumerate(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    cap = args.max_set_size if args.max_set_size is not None else args.d
    if not 1 <= cap <= args.d:
        raise InvalidArgumentError(f"max_set_size must lie in [1, {args.d}], got {cap}")
    if args.list:
        for tup in enumerate_tuples(args.d, cap):
            print(tup.label())
    enumerated = sum(1 for _ in enumerate_tuples(args.d, cap))
    closed_form = count_tuples(args.d, cap)
    print(f"d={args.d} max_set_size={cap} enumerated={enumerated} closed_form={closed_form}")
    return EXIT_OK if enumerated == closed_form else EXIT_UNEXPECTED


# Parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="Base random seed (default: 0)")
    parser.add_argument("--out-dir", default="out", help="Output directory (default: out)")
    parser.add_argument("--n-jobs", type=int, default=None, help="Worker processes (overrides IMP_N_JOBS; -1 = all cores)")
    parser.add_argument("--log-level", default=None, help="Log level (overrides IMP_LOG_LEVEL)")


def _add_search(parser: argparse.ArgumentParser, default_procedure: str, default_gammas: Sequence[float],
                default_cap: Optional[int]) -> None:
    parser.add_argument("--alpha", type=float, default=0.05, help="Test level (default: 0.05)")
    parser.add_argument("--gamma", type=float, nargs="+", default=list(default_gammas),
                        help="Vote cutoff fraction(s) in [0, 1]")
    parser.add_argument("--procedure", choices=sorted(PROCEDURE_FLAGS), default=default_procedure,
                        help="imp = Wald matching test, imp-inv = residual invariance test")
    parser.add_argument("--max-set-size", type=int, default=default_cap, help="Largest |S| enumerated")
    parser.add_argument("--score-keep-fraction", type=float, default=1.0,
                        help="Keep the best-scoring fraction of accepted candidates (default: 1.0)")


def _add_graph(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--d", type=int, default=8, help="Number of features X (default: 8)")
    parser.add_argument("--n-parents", type=int, default=2, help="|PA(Y)| (default: 2)")
    parser.add_argument("--n-children", type=int, default=2, help="|CH(Y)| (default: 2)")
    parser.add_argument("--edge-prob", type=float, default=0.3, help="X -> X edge probability (default: 0.3)")
    parser.add_argument("--envs", type=int, default=5, help="Environments (default: 5)")
    parser.add_argument("--n", type=int, default=300, help="Rows per environment (default: 300)")
    parser.add_argument("--mode", type=str.upper, choices=["A", "B"], default="A",
                        help="A: interventions on Y only; B: plus shifts on X")
    parser.add_argument("--x-interventions", type=int, default=4, help="Shifted X's in mode B (default: 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cli.py",
        description="Causal parent discovery from multi-environment data via invariant matching properties",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    discover = commands.add_parser("discover", help="Run search and voting on a multi-environment CSV")
    discover.add_argument("csv", help="Input CSV with one environment label column")
    discover.add_argument("--env-col", default="env", help="Environment label column (default: env)")
    discover.add_argument("--target-col", default="y", help="Target column (default: y)")
    discover.add_argument("--features", default=None, help="Comma-separated feature columns (default: all others)")
    discover.add_argument("--max-rows-per-env", type=int, default=None, help="Keep the first n rows per environment")
    _add_search(discover, "imp", [0.5], None)
    _add_common(discover)
    discover.set_defaults(handler=cmd_discover)

    replicate = commands.add_parser("replicate", help="Run the synthetic experiments and write plot data")
    replicate.add_argument("--datasets", type=int, default=200, help="Number of random datasets (default: 200)")
    _add_graph(replicate)
    _add_search(replicate, "both", DEFAULT_GAMMAS, None)
    _add_common(replicate)
    replicate.set_defaults(handler=cmd_replicate)

    simulate = commands.add_parser("simulate", help="Export a random SCM and its samples")
    _add_graph(simulate)
    simulate.add_argument("--coeff-low", type=float, default=0.5, help="Smallest |coefficient| (default: 0.5)")
    simulate.add_argument("--coeff-high", type=float, default=2.0, help="Largest |coefficient| (default: 2.0)")
    simulate.add_argument("--perturb-low", type=float, default=0.5, help="Smallest perturbation (default: 0.5)")
    simulate.add_argument("--perturb-high", type=float, default=1.5, help="Largest perturbation (default: 1.5)")
    _add_common(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    enumerate_ = commands.add_parser("enumerate", help="Audit the number of searched tuples")
    enumerate_.add_argument("--d", type=int, required=True, help="Number of features")
    enumerate_.add_argument("--max-set-size", type=int, default=None, help="Largest |S| (default: d)")
    enumerate_.add_argument("--list", action="store_true", help="Print every tuple")
    enumerate_.add_argument("--log-level", default=None, help="Log level (overrides IMP_LOG_LEVEL)")
    enumerate_.set_defaults(handler=cmd_enumerate, n_jobs=None)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = RuntimeSettings.from_env()
        updates = {}
        if args.n_jobs is not None:
            updates["n_jobs"] = args.n_jobs
        if args.log_level:
            updates["log_level"] = args.log_level
        settings = _validated(RuntimeSettings, **{**settings.model_dump(), **updates})
        configure_logging(settings.log_level)
    except (ValueError, DiscoveryError) as exc:
        print(f"Error: invalid runtime settings: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        return args.handler(args, settings)
    except DiscoveryError as exc:
        logger.error(f"[CLI] {args.command} failed ({exc.category}): {exc}")
        return exc.exit_code
    except Exception as exc:
        logger.exception(f"[CLI] {args.command} failed unexpectedly: {exc}")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
