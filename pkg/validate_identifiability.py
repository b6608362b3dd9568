#!/usr/bin/env python3
"""
Parent Discovery - Identifiability Validation Script
Checks, on exact population moments of seeded random linear SCMs, that the
matching property behaves as the identifiability results require:

  sufficiency: k not in PA(Y), PA(Y) in R and S, identifiable lambda
               -> matching residual below 1e-8
  necessity:   PA(Y) in S, identifiable lambda != 0, PA(Y) not in R
               -> matching residual above 1e-6

Run from project root: python validate_identifiability.py [--scms 100] [--seed 0]
"""

import argparse
import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional

# Ensure project root is on path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from loguru import logger

from CandidateSearchSystem import enumerate_tuples
from DiscoveryErrors import NumericalFailureError
from MatchingPropertyTests import POPULATION_TOLERANCE, oracle_matching
from RuntimeSettings import RuntimeSettings, configure_logging
from StructuralCausalModel import (
    attach_parameters,
    build_random_dag,
    make_environments,
    population_model,
    spawn_rngs,
)

SUFFICIENCY_BOUND = 1e-8
NECESSITY_BOUND = 1e-6


@dataclass
class SuiteResult:
    n_scms: int = 0
    sufficiency_checked: int = 0
    necessity_checked: int = 0
    sufficiency_failures: List[str] = field(default_factory=list)
    necessity_failures: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.sufficiency_failures and not self.necessity_failures


def run_suites(n_scms: int = 100, seed: Optional[int] = 0, n_envs: int = 3) -> SuiteResult:
    """Population sufficiency and necessity checks over n_scms random SCMs (d in 4..6, mode A)"""
    result = SuiteResult()
    for index, rng in enumerate(spawn_rngs(seed, n_scms)):
        d = int(rng.integers(4, 7))
        n_parents = int(rng.integers(1, 3))
        n_children = int(rng.integers(1, 3))
        dag = build_random_dag(d, 0.3, n_parents, n_children, rng)
        params = attach_parameters(dag, 0.5, 2.0, rng)
        specs = make_environments(params, n_envs, "A", 0.5, 1.5, 0, rng)
        try:
            pops = [population_model(params, spec) for spec in specs]
        except NumericalFailureError as exc:
            result.skipped.append(f"scm {index}: {exc}")
            continue
        result.n_scms += 1

        parents = set(dag.parents)
        for tup in enumerate_tuples(d, d):
            if not parents <= set(tup.S):
                continue
            try:
                outcome = oracle_matching(pops, tup)
            except NumericalFailureError:
                continue
            if not outcome.identifiable:
                continue
            where = f"scm {index} (PA={sorted(parents)}) {tup.label()}"
            if tup.k not in parents and parents <= set(tup.R):
                result.sufficiency_checked += 1
                if not outcome.residual_norm < SUFFICIENCY_BOUND:
                    result.sufficiency_failures.append(f"{where}: residual {outcome.residual_norm:.3e}")
            elif not parents <= set(tup.R) and abs(outcome.lambda_hat) > POPULATION_TOLERANCE:
                result.necessity_checked += 1
                if not outcome.residual_norm > NECESSITY_BOUND:
                    result.necessity_failures.append(
                        f"{where}: residual {outcome.residual_norm:.3e} lambda {outcome.lambda_hat:.3e}"
                    )
    return result


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Population identifiability validation")
    parser.add_argument("--scms", type=int, default=100, help="Number of random SCMs (default: 100)")
    parser.add_argument("--seed", type=int, default=0, help="Base seed (default: 0)")
    args = parser.parse_args(argv)
    configure_logging(RuntimeSettings.from_env().log_level)

    print("=" * 60)
    print("Parent Discovery - Identifiability Validation")
    print("=" * 60)

    try:
        result = run_suites(args.scms, args.seed)
    except Exception as e:
        logger.exception(f"[Validate] suite crashed: {e}")
        print(f"FAIL: suite could not run: {e}")
        return 1

    print(f"\n  SCMs evaluated: {result.n_scms} (skipped {len(result.skipped)})")
    for name, checked, failures in (
        ("Sufficiency", result.sufficiency_checked, result.sufficiency_failures),
        ("Necessity", result.necessity_checked, result.necessity_failures),
    ):
        if failures:
            print(f"\nFAIL: {name}: {len(failures)} of {checked} tuple(s) violated the bound:")
            for line in failures[:20]:
                print(f"  - {line}")
        else:
            print(f"✓ {name}: all {checked} tuples within bound")

    print("\n" + "-" * 60)
    if not result.passed:
        print("VALIDATION: FAILED")
        print(f"  {len(result.sufficiency_failures) + len(result.necessity_failures)} issue(s) found.")
        return 1
    print("VALIDATION: PASSED")
    print("-" * 60)
    return 0


if __name__ == "__main__":
    sys.exit(main())
