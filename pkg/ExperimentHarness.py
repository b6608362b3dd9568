"""
Parent Discovery - Synthetic Experiment Harness
Replicates the multi-environment simulations end to end:

    random SCM -> environments (mode A: only Y intervened, mode B: plus X shifts)
    -> samples -> candidate search -> voting -> estimate per gamma

and aggregates three curves per procedure: P(PA(Y) within the top-k votes),
P(estimate == PA(Y)) and P(estimate subset of PA(Y)) against gamma.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Literal, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from CandidateSearchSystem import SearchConfig, run_search
from DiscoveryErrors import DiscoveryError
from MatchingPropertyTests import PROCEDURES
from StructuralCausalModel import (
    attach_parameters,
    build_random_dag,
    make_environments,
    sample_environment,
    spawn_rngs,
)
from VotingSystem import cutoff, tally, top_k_report

DEFAULT_GAMMAS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

# Reported subset rates of the ICP baseline on the same two settings; not computed here.
ICP_REFERENCE_SUBSET_RATES = {"A": 0.305, "B": 0.435}


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_datasets: int = 200
    n_envs: int = 5
    n_per_env: int = 300
    d: int = 8
    n_parents_y: int = 2
    n_children_y: int = 2
    edge_prob: float = 0.3
    coeff_low: float = 0.5
    coeff_high: float = 2.0
    perturb_low: float = 0.5
    perturb_high: float = 1.5
    n_x_interventions: int = 4
    gammas: Tuple[float, ...] = DEFAULT_GAMMAS
    procedures: Tuple[Literal["definition", "invariance"], ...] = PROCEDURES
    alpha: float = 0.05
    max_set_size: Optional[int] = 5
    score_keep_fraction: float = 1.0
    seed: Optional[int] = 0
    n_jobs: int = 1

    @field_validator("n_datasets", "n_envs", "n_per_env", "d", "n_parents_y", "n_children_y")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value <= 0:
            raise ValueError(f"counts must be positive, got {value}")
        return value

    @field_validator("gammas")
    @classmethod
    def _check_gammas(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value or any(not 0.0 <= g <= 1.0 for g in value):
            raise ValueError(f"gammas must be a non-empty subset of [0, 1], got {list(value)}")
        return tuple(sorted(set(value)))

    @field_validator("procedures")
    @classmethod
    def _check_procedures(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if not value:
            raise ValueError("at least one procedure is required")
        return tuple(p for p in PROCEDURES if p in value)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.n_envs < 2:
            raise ValueError("n_envs must be at least 2")
        if self.n_parents_y + self.n_children_y > self.d:
            raise ValueError("n_parents_y + n_children_y must not exceed d")
        if self.n_x_interventions > self.d:
            raise ValueError("n_x_interventions must not exceed d")
        if self.max_set_size is not None and self.max_set_size > self.d:
            raise ValueError("max_set_size must not exceed d")
        if self.n_per_env < self.d + 3:
            raise ValueError(f"n_per_env must be at least d + 3 = {self.d + 3}")
        return self

    def search_config(self) -> SearchConfig:
        procedure = "both" if len(self.procedures) == 2 else self.procedures[0]
        return SearchConfig(
            alpha=self.alpha,
            max_set_size=self.max_set_size,
            procedure=procedure,
            score_keep_fraction=self.score_keep_fraction,
            seed=self.seed,
            n_jobs=1,
        )


class EstimateEvaluation(NamedTuple):
    exact: bool
    subset: bool
    n_false: int


def evaluate_estimate(estimate: Iterable[int], truth: Iterable[int]) -> EstimateEvaluation:
    estimate, truth = set(estimate), set(truth)
    return EstimateEvaluation(exact=estimate == truth, subset=estimate <= truth, n_false=len(estimate - truth))


@dataclass
class ProcedureOutcome:
    q: int
    votes: List[int]
    topk_hits: Dict[int, bool]
    estimates: Dict[float, List[int]]
    evaluations: Dict[float, EstimateEvaluation]


@dataclass
class DatasetRecord:
    index: int
    parents: List[int]
    status: str = "ok"
    error: str = ""
    outcomes: Dict[str, ProcedureOutcome] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    mode: str
    config: Dict
    n_datasets: int
    n_failed: int
    success_prob: Dict[str, Dict[float, float]]
    subset_prob: Dict[str, Dict[float, float]]
    mean_false: Dict[str, Dict[float, float]]
    topk_curve: Dict[str, List[Tuple[int, float]]]
    records: List[DatasetRecord]


def _topk_hits(votes, parents: FrozenSet[int], q: int, d: int) -> Dict[int, bool]:
    hits = {}
    for k in range(len(parents), d + 1):
        if k == d:
            hits[k] = True
        else:
            hits[k] = q > 0 and parents <= set(top_k_report(votes, k))
    return hits


def _run_dataset(config: ExperimentConfig, mode: str, index: int, rng: np.random.Generator) -> DatasetRecord:
    record = DatasetRecord(index=index, parents=[])
    try:
        dag = build_random_dag(config.d, config.edge_prob, config.n_parents_y, config.n_children_y, rng)
        record.parents = list(dag.parents)
        params = attach_parameters(dag, config.coeff_low, config.coeff_high, rng)
        specs = make_environments(
            params, config.n_envs, mode, config.perturb_low, config.perturb_high, config.n_x_interventions, rng
        )
        samples = [sample_environment(params, spec, config.n_per_env, rng) for spec in specs]
        candidates = run_search(samples, config.search_config())
    except (DiscoveryError, np.linalg.LinAlgError) as exc:
        logger.warning(f"[Experiment] dataset {index} failed: {exc}")
        record.status = "failed"
        record.error = str(exc)
        return record

    parents = frozenset(dag.parents)
    for procedure in config.procedures:
        votes = tally(candidates.by_procedure(procedure))
        estimates = {g: sorted(cutoff(votes, g)) for g in config.gammas}
        record.outcomes[procedure] = ProcedureOutcome(
            q=votes.q,
            votes=votes.votes.tolist(),
            topk_hits=_topk_hits(votes, parents, votes.q, config.d),
            estimates=estimates,
            evaluations={g: evaluate_estimate(est, parents) for g, est in estimates.items()},
        )
    return record


def _mean(values: List[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def run_experiment(config: ExperimentConfig, mode: str) -> ExperimentReport:
    """All datasets of one setting; deterministic given config.seed regardless of n_jobs"""
    mode = str(mode).upper()
    if mode not in ("A", "B"):
        raise ValueError(f"mode must be 'A' or 'B', got {mode!r}")
    logger.info(
        f"[Experiment] mode {mode}: {config.n_datasets} datasets, {config.n_envs} envs x {config.n_per_env} rows, "
        f"d={config.d}, procedures={list(config.procedures)}"
    )
    rngs = spawn_rngs(config.seed, config.n_datasets)
    records = Parallel(n_jobs=config.n_jobs)(
        delayed(_run_dataset)(config, mode, i, rng) for i, rng in enumerate(rngs)
    )
    ok = [r for r in records if r.status == "ok"]
    n_failed = len(records) - len(ok)

    success, subset, false_counts, topk = {}, {}, {}, {}
    for procedure in config.procedures:
        outcomes = [r.outcomes[procedure] for r in ok]
        success[procedure] = {g: _mean([o.evaluations[g].exact for o in outcomes]) for g in config.gammas}
        subset[procedure] = {g: _mean([o.evaluations[g].subset for o in outcomes]) for g in config.gammas}
        false_counts[procedure] = {g: _mean([o.evaluations[g].n_false for o in outcomes]) for g in config.gammas}
        topk[procedure] = [
            (k, _mean([o.topk_hits[k] for o in outcomes])) for k in range(config.n_parents_y, config.d + 1)
        ]
        logger.info(
            f"[Experiment] {procedure}: P(PA in top |PA|)={topk[procedure][0][1]:.3f} "
            f"subset@gamma={config.gammas[-1]}: {subset[procedure][config.gammas[-1]]:.3f}"
        )
    if n_failed:
        logger.warning(f"[Experiment] {n_failed} of {len(records)} datasets failed")

    return ExperimentReport(
        mode=mode,
        config=config.model_dump(mode="json", exclude={"n_jobs"}),
        n_datasets=len(records),
        n_failed=n_failed,
        success_prob=success,
        subset_prob=subset,
        mean_false=false_counts,
        topk_curve=topk,
        records=list(records),
    )


# Output


def _gamma_key(gamma: float) -> str:
    return f"{gamma:g}"


def report_to_dict(report: ExperimentReport) -> Dict:
    return {
        "mode": report.mode,
        "config": report.config,
        "n_datasets": report.n_datasets,
        "n_failed": report.n_failed,
        "success_prob": {p: {_gamma_key(g): v for g, v in c.items()} for p, c in report.success_prob.items()},
        "subset_prob": {p: {_gamma_key(g): v for g, v in c.items()} for p, c in report.subset_prob.items()},
        "mean_false_discoveries": {p: {_gamma_key(g): v for g, v in c.items()} for p, c in report.mean_false.items()},
        "topk_curve": {p: [{"k": k, "probability": v} for k, v in c] for p, c in report.topk_curve.items()},
        "reference": {
            "icp_subset_rate_reported": ICP_REFERENCE_SUBSET_RATES.get(report.mode),
            "note": "static annotation; baselines are not executed",
        },
        "unpublished_defaults": {
            key: report.config[key]
            for key in ("d", "n_parents_y", "n_children_y", "edge_prob", "coeff_low", "coeff_high",
                        "perturb_low", "perturb_high")
        },
    }


def write_report_json(report: ExperimentReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def dataset_frame(report: ExperimentReport) -> pd.DataFrame:
    """One row per (dataset, procedure, gamma); failed datasets keep one row with the error"""
    rows = []
    for record in report.records:
        if record.status != "ok":
            rows.append({"dataset": record.index, "status": record.status, "error": record.error})
            continue
        for procedure, outcome in record.outcomes.items():
            for gamma, evaluation in outcome.evaluations.items():
                rows.append({
                    "dataset": record.index,
                    "status": record.status,
                    "error": "",
                    "procedure": procedure,
                    "gamma": gamma,
                    "q": outcome.q,
                    "parents": ";".join(f"x{j + 1}" for j in record.parents),
                    "estimate": ";".join(f"x{j + 1}" for j in outcome.estimates[gamma]),
                    "exact": evaluation.exact,
                    "subset": evaluation.subset,
                    "n_false": evaluation.n_false,
                    "top_pa_hit": outcome.topk_hits[len(record.parents)],
                })
    return pd.DataFrame(rows)


def write_plot_data(report: ExperimentReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """topk.csv, success_vs_gamma.csv, subset_vs_gamma.csv and datasets.csv"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    topk = pd.DataFrame(
        [{"procedure": p, "k": k, "probability": v} for p, curve in report.topk_curve.items() for k, v in curve]
    )
    success = pd.DataFrame(
        [{"procedure": p, "gamma": g, "probability": v} for p, c in report.success_prob.items() for g, v in c.items()]
    )
    subset = pd.DataFrame(
        [{"procedure": p, "gamma": g, "probability": v} for p, c in report.subset_prob.items() for g, v in c.items()]
    )
    paths = {
        "topk": out_dir / "topk.csv",
        "success": out_dir / "success_vs_gamma.csv",
        "subset": out_dir / "subset_vs_gamma.csv",
        "datasets": out_dir / "datasets.csv",
    }
    topk.to_csv(paths["topk"], index=False)
    success.to_csv(paths["success"], index=False)
    subset.to_csv(paths["subset"], index=False)
    dataset_frame(report).to_csv(paths["datasets"], index=False)
    return paths
