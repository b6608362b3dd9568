"""Shared fixtures: the chain X1 -> Y -> X2 with alpha = 2 and environment-specific beta"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from DiscoveryErrors import NumericalFailureError
from StructuralCausalModel import (
    Dag,
    EnvSpec,
    ScmParams,
    attach_parameters,
    build_random_dag,
    make_environments,
    population_model,
    sample_environment,
    spawn_rngs,
)

CHAIN_ALPHA = 2.0


def chain_params(noise_var_y: float = 1.0) -> ScmParams:
    dag = Dag(d=2, edges_xx=frozenset(), parents_y=frozenset({0}), children_y=frozenset({1}))
    return ScmParams(
        dag=dag,
        alpha=np.array([0.0, CHAIN_ALPHA]),
        B=np.zeros((2, 2)),
        beta_base=np.array([1.0, 0.0]),
        noise_var_x=np.ones(2),
        noise_var_y=noise_var_y,
    )


def chain_specs(betas, shifts=None):
    shifts = shifts if shifts is not None else [0.0] * len(betas)
    return [
        EnvSpec(env_id=f"env{e + 1}", beta=np.array([b, 0.0]), shift_y=s, shift_x=np.zeros(2))
        for e, (b, s) in enumerate(zip(betas, shifts))
    ]


def chain_samples(betas, n, seed, shifts=None):
    params = chain_params()
    rngs = spawn_rngs(seed, len(betas))
    return [sample_environment(params, spec, n, rng) for spec, rng in zip(chain_specs(betas, shifts), rngs)]


def random_populations(n_scms, seed, n_envs=3):
    """(dag, populations) for seeded setting-A SCMs with d in {4, 5}; singular draws are skipped"""
    for rng in spawn_rngs(seed, n_scms):
        d = int(rng.integers(4, 6))
        dag = build_random_dag(d, 0.3, int(rng.integers(1, 3)), int(rng.integers(1, 3)), rng)
        params = attach_parameters(dag, 0.5, 2.0, rng)
        specs = make_environments(params, n_envs, "A", 0.5, 1.5, 0, rng)
        try:
            pops = [population_model(params, spec) for spec in specs]
        except NumericalFailureError:
            continue
        yield dag, pops


@pytest.fixture
def chain():
    return chain_params()


@pytest.fixture
def chain_five_envs():
    """5 environments, beta in {1, 1.5, 2, 2.5, 3}, n = 300"""
    return chain_samples([1.0, 1.5, 2.0, 2.5, 3.0], 300, seed=11)
