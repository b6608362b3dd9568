"""
Parent Discovery - Candidate Search
Enumerates every (k, R, S) with S non-empty, |S| <= max_set_size and
R subset of S minus k, screens (k, R) for identifiability, runs the configured
matching procedure(s) and keeps the accepted, best-scoring candidates.
"""

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict, field_validator

from DiscoveryErrors import InvalidArgumentError, NumericalFailureError
from LinearEstimation import EmbeddedCoeffs
from MatchingPropertyTests import (
    PROCEDURES,
    IdentifiabilityResult,
    ImpCandidate,
    MatchingTuple,
    POPULATION_TOLERANCE,
    RegressionCache,
    identifiability_test,
    imp_inv_test,
    imp_test,
    oracle_matching,
    prediction_score,
)
from StructuralCausalModel import EnvSample, PopulationModel

LARGE_D_SET_CAP = 5


class SearchConfig(BaseModel):
    """
    Search settings. The search draws no random numbers: seed is only echoed
    into run manifests to record the seed of the data that was searched.
    """
    model_config = ConfigDict(frozen=True)

    alpha: float = 0.05
    max_set_size: Optional[int] = None
    procedure: Literal["definition", "invariance", "both"] = "definition"
    score_keep_fraction: float = 1.0
    seed: Optional[int] = 0
    n_jobs: int = 1

    @field_validator("alpha")
    @classmethod
    def _check_alpha(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {value}")
        return value

    @field_validator("max_set_size")
    @classmethod
    def _check_cap(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError(f"max_set_size must be at least 1, got {value}")
        return value

    @field_validator("score_keep_fraction")
    @classmethod
    def _check_fraction(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError(f"score_keep_fraction must lie in (0, 1], got {value}")
        return value

    def resolved_max_set_size(self, d: int) -> int:
        cap = self.max_set_size if self.max_set_size is not None else (d if d <= 8 else LARGE_D_SET_CAP)
        if cap > d:
            raise InvalidArgumentError(f"max_set_size={cap} exceeds d={d}")
        return cap

    def procedures(self) -> Tuple[str, ...]:
        return PROCEDURES if self.procedure == "both" else (self.procedure,)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    candidates: Tuple[ImpCandidate, ...]
    d: int
    feature_names: Optional[Tuple[str, ...]] = None

    @property
    def q(self) -> int:
        return len(self.candidates)

    def by_procedure(self, procedure: str) -> "CandidateSet":
        kept = tuple(c for c in self.candidates if c.procedure == procedure)
        return CandidateSet(candidates=kept, d=self.d, feature_names=self.feature_names)

    def records(self) -> List[Dict]:
        return [c.to_record(self.feature_names) for c in self.candidates]


def canonical_order(candidates: Sequence[ImpCandidate]) -> List[ImpCandidate]:
    rank = {name: i for i, name in enumerate(PROCEDURES)}
    return sorted(candidates, key=lambda c: (rank.get(c.procedure, len(rank)), c.tuple.sort_key()))


# Enumeration


def enumerate_tuples(d: int, max_set_size: int) -> Iterator[MatchingTuple]:
    """k ascending; S by size then lexicographic; R by size then lexicographic"""
    if d < 2:
        raise InvalidArgumentError(f"d must be at least 2, got {d}")
    cap = min(max_set_size, d)
    for k in range(d):
        for size in range(1, cap + 1):
            for S in combinations(range(d), size):
                rest = [j for j in S if j != k]
                for r_size in range(len(rest) + 1):
                    for R in combinations(rest, r_size):
                        yield MatchingTuple(k=k, R=R, S=S)


def count_tuples(d: int, max_set_size: int) -> int:
    """sum over S of sum over k of 2^{|S minus k|}"""
    cap = min(max_set_size, d)
    return sum(math.comb(d, s) * (s * 2 ** (s - 1) + (d - s) * 2**s) for s in range(1, cap + 1))


# Sample search


def _check_samples(samples: Sequence[EnvSample]) -> int:
    if len(samples) < 2:
        raise InvalidArgumentError(f"at least 2 environments are required, got {len(samples)}")
    dims = {s.d for s in samples}
    if len(dims) != 1:
        raise InvalidArgumentError(f"environments disagree on the number of features: {sorted(dims)}")
    return dims.pop()


def _screen_identifiability(samples, tuples, alpha) -> Dict[Tuple[int, Tuple[int, ...]], IdentifiabilityResult]:
    cache = RegressionCache(samples)
    screened: Dict[Tuple[int, Tuple[int, ...]], IdentifiabilityResult] = {}
    for tup in tuples:
        key = (tup.k, tup.R)
        if key in screened:
            continue
        try:
            screened[key] = identifiability_test(samples, tup.k, tup.R, alpha, cache)
        except NumericalFailureError as exc:
            logger.debug(f"[Search] identifiability of k=x{tup.k + 1} R={tup.R} failed: {exc}")
            screened[key] = IdentifiabilityResult(p_value=1.0, identifiable=False, statistic=float("nan"))
    return screened


def _evaluate_chunk(samples, chunk, screened, procedures, alpha) -> List[ImpCandidate]:
    cache = RegressionCache(samples)
    tests = {"definition": imp_test, "invariance": imp_inv_test}
    accepted = []
    for tup in chunk:
        ident = screened[(tup.k, tup.R)]
        for procedure in procedures:
            try:
                candidate = tests[procedure](samples, tup, alpha, cache=cache, ident=ident)
                if not candidate.accepted:
                    continue
                candidate = candidate.with_score(prediction_score(samples, candidate, cache))
            except NumericalFailureError as exc:
                logger.debug(f"[Search] {procedure} {tup.label()} rejected: {exc}")
                continue
            accepted.append(candidate)
    return accepted


def _chunks(items: List, n_chunks: int) -> List[List]:
    if not items:
        return []
    size = math.ceil(len(items) / max(1, n_chunks))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _apply_score_filter(candidates: List[ImpCandidate], fraction: float) -> List[ImpCandidate]:
    if fraction >= 1.0:
        return candidates
    kept = []
    for procedure in PROCEDURES:
        group = [c for c in candidates if c.procedure == procedure]
        if not group:
            continue
        n_keep = math.ceil(fraction * len(group))
        group.sort(key=lambda c: (c.score, c.tuple.sort_key()))
        kept.extend(group[:n_keep])
    return kept


def run_search(
    samples: Sequence[EnvSample],
    config: SearchConfig,
    feature_names: Optional[Sequence[str]] = None,
) -> CandidateSet:
    """Accepted IMP candidates over all enumerated tuples (empty set is not an error)"""
    d = _check_samples(samples)
    cap = config.resolved_max_set_size(d)
    tuples = list(enumerate_tuples(d, cap))
    screened = _screen_identifiability(samples, tuples, config.alpha)
    testable = [t for t in tuples if screened[(t.k, t.R)].identifiable]
    logger.info(
        f"[Search] d={d} envs={len(samples)} max_set_size={cap} tuples={len(tuples)} "
        f"identifiable (k,R)={sum(r.identifiable for r in screened.values())}/{len(screened)} "
        f"testable={len(testable)} procedure={config.procedure}"
    )

    n_jobs = config.n_jobs
    chunk_count = 1 if n_jobs == 1 else 4 * (n_jobs if n_jobs > 0 else 8)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_chunk)(list(samples), chunk, screened, config.procedures(), config.alpha)
        for chunk in _chunks(testable, chunk_count)
    )
    accepted = [candidate for chunk_result in results for candidate in chunk_result]
    accepted = canonical_order(_apply_score_filter(accepted, config.score_keep_fraction))
    logger.info(f"[Search] accepted q={len(accepted)} candidates")
    names = tuple(feature_names) if feature_names is not None else None
    return CandidateSet(candidates=tuple(accepted), d=d, feature_names=names)


# Population oracle search


def run_oracle_search(
    pops: Sequence[PopulationModel],
    config: SearchConfig,
    tol: float = POPULATION_TOLERANCE,
) -> CandidateSet:
    """Tuples whose exact matching residual vanishes with identifiable, nonzero lambda"""
    if len(pops) < 2:
        raise InvalidArgumentError(f"at least 2 environments are required, got {len(pops)}")
    d = pops[0].d
    cap = config.resolved_max_set_size(d)
    accepted = []
    for tup in enumerate_tuples(d, cap):
        try:
            outcome = oracle_matching(pops, tup, tol)
        except NumericalFailureError:
            continue
        if not outcome.identifiable or outcome.residual_norm >= tol or abs(outcome.lambda_hat) <= tol:
            continue
        accepted.append(
            ImpCandidate(
                tuple=tup,
                lambda_hat=outcome.lambda_hat,
                eta_hat=EmbeddedCoeffs(intercept=0.0, coef=np.zeros(d)),
                p_imp=1.0,
                p_ident=0.0,
                procedure="definition",
                lambda_se=0.0,
                p_lambda=0.0,
                accepted=True,
            )
        )
    logger.info(f"[Oracle] d={d} accepted q={len(accepted)} population IMPs")
    return CandidateSet(candidates=tuple(canonical_order(accepted)), d=d)


# Reports


def write_candidate_report(candidates: CandidateSet, path: Union[str, Path]) -> Path:
    """One JSON record per line: procedure, k, R, S, lambda, p-values, score"""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for record in candidates.records():
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_candidate_report(path: Union[str, Path]) -> List[Dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
