import networkx as nx
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import chain_specs
from DiscoveryErrors import InsufficientSamplesError, InvalidArgumentError
from StructuralCausalModel import (
    Dag,
    EnvSpec,
    ScmParams,
    attach_parameters,
    build_random_dag,
    export_samples_csv,
    make_environments,
    population_model,
    sample_environment,
    scm_from_json,
    scm_to_json,
    spawn_rngs,
    topological_order,
)


def test_chain_dag_without_xx_edges():
    dag = build_random_dag(2, 0.0, 1, 1, np.random.default_rng(3))
    assert dag.edges_xx == frozenset()
    assert len(dag.parents) == 1 and len(dag.children) == 1
    assert set(dag.parents) | set(dag.children) == {0, 1}


def test_random_dag_structure():
    dag = build_random_dag(6, 0.3, 2, 1, np.random.default_rng(5))
    assert len(dag.parents) == 2
    assert len(dag.children) == 1
    assert dag.satisfies_child_assumption()
    order = topological_order(dag)
    assert len(order) == 7
    position = {node: i for i, node in enumerate(order)}
    for j in dag.parents:
        assert position[j] < position["Y"]
    for j in dag.children:
        assert position["Y"] < position[j]


def test_random_dag_is_deterministic():
    a = build_random_dag(8, 0.3, 2, 2, np.random.default_rng(42))
    b = build_random_dag(8, 0.3, 2, 2, np.random.default_rng(42))
    assert a == b


def test_dag_rejects_cycle_through_y():
    with pytest.raises(InvalidArgumentError):
        Dag(d=2, edges_xx=frozenset({(1, 0)}), parents_y=frozenset({0}), children_y=frozenset({1}))


def test_dag_rejects_parent_and_child():
    with pytest.raises(InvalidArgumentError):
        Dag(d=3, edges_xx=frozenset(), parents_y=frozenset({0}), children_y=frozenset({0, 1}))


def test_b_is_triangular_under_topological_order():
    rng = np.random.default_rng(9)
    dag = build_random_dag(7, 0.5, 2, 2, rng)
    params = attach_parameters(dag, 0.5, 2.0, rng)
    xs = [node for node in topological_order(dag) if node != "Y"]
    permuted = params.B[np.ix_(xs, xs)]
    assert_array_equal(np.triu(permuted), np.zeros_like(permuted))
    assert nx.is_directed_acyclic_graph(dag.to_networkx())


def test_degenerate_coefficient_range():
    dag = Dag(d=2, edges_xx=frozenset(), parents_y=frozenset({0}), children_y=frozenset({1}))
    params = attach_parameters(dag, 1.0, 1.0, np.random.default_rng(0))
    assert abs(params.alpha[1]) == 1.0
    assert abs(params.beta_base[0]) == 1.0
    assert params.alpha[0] == 0.0 and params.beta_base[1] == 0.0


def test_parameters_follow_sparsity_and_seed():
    dag = build_random_dag(6, 0.4, 2, 2, np.random.default_rng(1))
    a = attach_parameters(dag, 0.5, 2.0, np.random.default_rng(2))
    b = attach_parameters(dag, 0.5, 2.0, np.random.default_rng(2))
    assert_array_equal(a.B, b.B)
    assert_array_equal(a.beta_base, b.beta_base)
    assert set(np.flatnonzero(a.beta_base)) == set(dag.parents)
    assert set(np.flatnonzero(a.alpha)) == set(dag.children)
    assert {(i, j) for j, i in zip(*np.nonzero(a.B))} == set(dag.edges_xx)


def test_params_reject_sparsity_mismatch(chain):
    with pytest.raises(InvalidArgumentError):
        ScmParams(
            dag=chain.dag,
            alpha=np.array([0.0, 2.0]),
            B=np.zeros((2, 2)),
            beta_base=np.array([1.0, 1.0]),
            noise_var_x=np.ones(2),
        )


def _random_params(seed, d=6):
    rng = np.random.default_rng(seed)
    dag = build_random_dag(d, 0.3, 2, 2, rng)
    return attach_parameters(dag, 0.5, 2.0, rng), rng


def test_mode_a_environments():
    params, rng = _random_params(0)
    specs = make_environments(params, 5, "A", 0.5, 1.5, 4, rng)
    assert len(specs) == 5
    for spec in specs:
        assert_array_equal(spec.shift_x, np.zeros(params.d))
        assert spec.respects(params.dag)
    for j in params.dag.parents:
        values = np.sort([spec.beta[j] for spec in specs])
        assert np.all(np.diff(values) > 1e-9)


def test_mode_b_shifts_the_same_four_features():
    params, rng = _random_params(1)
    specs = make_environments(params, 5, "B", 0.5, 1.5, 4, rng)
    supports = {tuple(np.flatnonzero(spec.shift_x)) for spec in specs}
    assert len(supports) == 1
    assert len(supports.pop()) == 4


def test_degenerate_perturbation_range_is_rejected():
    params, rng = _random_params(2)
    with pytest.raises(InvalidArgumentError):
        make_environments(params, 5, "A", 0.0, 0.0, 0, rng)


def test_single_environment_is_rejected():
    params, rng = _random_params(3)
    with pytest.raises(InvalidArgumentError):
        make_environments(params, 1, "A", 0.5, 1.5, 0, rng)


def test_chain_population_moments(chain):
    pop = population_model(chain, chain_specs([3.0])[0])
    cov = pop.cov  # order x1, x2, y
    assert_allclose(cov[0, 2], 3.0)
    assert_allclose(cov[0, 1], 6.0)
    assert_allclose(cov[2, 2], 10.0)
    assert_allclose(cov[1, 1], 41.0)
    assert_allclose(pop.mean, np.zeros(3), atol=1e-12)


def test_disconnected_population_is_diagonal():
    dag = Dag(d=3, edges_xx=frozenset(), parents_y=frozenset({0}), children_y=frozenset({1}))
    params = ScmParams(
        dag=dag,
        alpha=np.array([0.0, 1.0, 0.0]),
        B=np.zeros((3, 3)),
        beta_base=np.array([1.0, 0.0, 0.0]),
        noise_var_x=np.array([1.0, 2.0, 3.0]),
        noise_var_y=0.5,
    )
    zeroed = EnvSpec(env_id="zero", beta=np.zeros(3), shift_y=0.0, shift_x=np.zeros(3))
    pop = population_model(params, zeroed)  # order x1, x2, x3, y
    expected = np.diag([1.0, 2.5, 3.0, 0.5])
    expected[1, 3] = expected[3, 1] = 0.5
    assert_allclose(pop.cov, expected, atol=1e-12)


def test_sample_variance_matches_chain(chain):
    spec = chain_specs([1.0])[0]
    sample = sample_environment(chain, spec, 100_000, np.random.default_rng(0))
    assert abs(np.var(sample.x[:, 1]) / 9.0 - 1.0) < 0.02


def test_sample_covariance_matches_population():
    params, rng = _random_params(4, d=4)
    spec = make_environments(params, 2, "A", 0.5, 1.5, 0, rng)[0]
    sample = sample_environment(params, spec, 1_000_000, np.random.default_rng(1))
    empirical = np.cov(np.column_stack([sample.x, sample.y]), rowvar=False)
    pop = population_model(params, spec)
    scale = np.sqrt(np.outer(np.diag(pop.cov), np.diag(pop.cov)))
    assert np.max(np.abs(empirical - pop.cov) / scale) < 0.01


def test_too_few_rows(chain):
    with pytest.raises(InsufficientSamplesError):
        sample_environment(chain, chain_specs([1.0])[0], 4, np.random.default_rng(0))


def test_sampling_is_deterministic(chain):
    spec = chain_specs([2.0])[0]
    a = sample_environment(chain, spec, 50, np.random.default_rng(8))
    b = sample_environment(chain, spec, 50, np.random.default_rng(8))
    assert a.x.tobytes() == b.x.tobytes()
    assert a.y.tobytes() == b.y.tobytes()


def test_spawned_streams_differ():
    a, b = spawn_rngs(0, 2)
    assert a.random() != b.random()
    assert spawn_rngs(5, 3)[2].random() == spawn_rngs(5, 3)[2].random()


def test_scm_json_round_trip():
    params, rng = _random_params(6)
    specs = make_environments(params, 3, "B", 0.5, 1.5, 2, rng)
    restored, restored_specs = scm_from_json(scm_to_json(params, specs))
    assert restored.dag == params.dag
    assert_array_equal(restored.B, params.B)
    assert [s.env_id for s in restored_specs] == [s.env_id for s in specs]
    assert_array_equal(restored_specs[1].shift_x, specs[1].shift_x)


def test_malformed_scm_json():
    with pytest.raises(InvalidArgumentError):
        scm_from_json('{"d": 2}')


def test_export_samples_header(chain, tmp_path):
    samples = [sample_environment(chain, spec, 10, np.random.default_rng(0)) for spec in chain_specs([1.0, 2.0])]
    path = export_samples_csv(samples, tmp_path / "data.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "env,x1,x2,y"
    assert len(lines) == 21
