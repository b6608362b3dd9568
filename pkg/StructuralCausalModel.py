"""
Parent Discovery - Linear Structural Causal Models
Random graphs over (X_1..X_d, Y), coefficient attachment, interventions on Y
(and optionally shifts on X), sampling, and exact population moments.

The model for environment e is

    X = alpha * Y + B X + eps_X
    Y = beta_e^T X + eps_Y + shift_y

with X-assignments shared by all environments. Stacking W = (X, Y) gives
A_e W = eps + shifts, A_e = [[I - B, -alpha], [-beta_e^T, 1]].
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd
from loguru import logger

from DiscoveryErrors import (
    InsufficientSamplesError,
    InvalidArgumentError,
    NumericalFailureError,
    SingularMatrixError,
)

Mode = Literal["A", "B"]
Y_NODE = "Y"
CONDITION_FIVE_FLOOR = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dag:
    """Graph over X_0..X_{d-1} and the single target Y (0-based X indices)"""
    d: int
    edges_xx: FrozenSet[Tuple[int, int]]
    parents_y: FrozenSet[int]
    children_y: FrozenSet[int]

    def __post_init__(self):
        object.__setattr__(self, "edges_xx", frozenset((int(i), int(j)) for i, j in self.edges_xx))
        object.__setattr__(self, "parents_y", frozenset(int(j) for j in self.parents_y))
        object.__setattr__(self, "children_y", frozenset(int(j) for j in self.children_y))
        if self.d < 1:
            raise InvalidArgumentError(f"d must be positive, got {self.d}")
        nodes = set(range(self.d))
        for i, j in self.edges_xx:
            if i not in nodes or j not in nodes or i == j:
                raise InvalidArgumentError(f"invalid X edge ({i}, {j}) for d={self.d}")
        if not (self.parents_y | self.children_y) <= nodes:
            raise InvalidArgumentError("Y neighbours must be X indices in range")
        if self.parents_y & self.children_y:
            raise InvalidArgumentError(
                f"X variables cannot be both parent and child of Y: {sorted(self.parents_y & self.children_y)}"
            )
        if not nx.is_directed_acyclic_graph(self.to_networkx()):
            raise InvalidArgumentError("graph over (X, Y) contains a cycle")

    @property
    def parents(self) -> Tuple[int, ...]:
        return tuple(sorted(self.parents_y))

    @property
    def children(self) -> Tuple[int, ...]:
        return tuple(sorted(self.children_y))

    def satisfies_child_assumption(self) -> bool:
        """Y has at least one child"""
        return len(self.children_y) > 0

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.d))
        graph.add_node(Y_NODE)
        graph.add_edges_from(sorted(self.edges_xx))
        graph.add_edges_from((j, Y_NODE) for j in sorted(self.parents_y))
        graph.add_edges_from((Y_NODE, j) for j in sorted(self.children_y))
        return graph


def topological_order(dag: Dag) -> List[Union[int, str]]:
    """Deterministic topological order of all d + 1 nodes"""
    return list(nx.lexicographical_topological_sort(dag.to_networkx(), key=str))


@dataclass(frozen=True, eq=False)
class ScmParams:
    """
    Coefficients shared across environments.
    B[j, i] is the coefficient of X_i in the assignment of X_j (edge i -> j).
    """
    dag: Dag
    alpha: np.ndarray
    B: np.ndarray
    beta_base: np.ndarray
    noise_var_x: np.ndarray
    noise_var_y: float = 1.0

    def __post_init__(self):
        d = self.dag.d
        for name in ("alpha", "beta_base", "noise_var_x"):
            value = _frozen(getattr(self, name))
            if value.shape != (d,):
                raise InvalidArgumentError(f"{name} must have shape ({d},), got {value.shape}")
            object.__setattr__(self, name, value)
        B = _frozen(self.B)
        if B.shape != (d, d):
            raise InvalidArgumentError(f"B must have shape ({d}, {d}), got {B.shape}")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "noise_var_y", float(self.noise_var_y))

        if np.any(self.noise_var_x <= 0) or self.noise_var_y <= 0:
            raise InvalidArgumentError("noise variances must be positive")

        expected_b = np.zeros((d, d), dtype=bool)
        for i, j in self.dag.edges_xx:
            expected_b[j, i] = True
        if not np.array_equal(self.B != 0, expected_b):
            raise InvalidArgumentError("sparsity of B does not match the X -> X edges")
        if not np.array_equal(np.flatnonzero(self.alpha), np.array(self.dag.children, dtype=int)):
            raise InvalidArgumentError("sparsity of alpha does not match the children of Y")
        if not np.array_equal(np.flatnonzero(self.beta_base), np.array(self.dag.parents, dtype=int)):
            raise InvalidArgumentError("sparsity of beta_base does not match the parents of Y")

        condition = np.linalg.cond(np.eye(d) - self.B)
        if not np.isfinite(condition):
            raise SingularMatrixError("I - B is singular")

    @property
    def d(self) -> int:
        return self.dag.d


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """Intervened parameters of one environment"""
    env_id: str
    beta: np.ndarray
    shift_y: float
    shift_x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "env_id", str(self.env_id))
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "shift_x", _frozen(self.shift_x))
        object.__setattr__(self, "shift_y", float(self.shift_y))
        if self.beta.shape != self.shift_x.shape or self.beta.ndim != 1:
            raise InvalidArgumentError("beta and shift_x must be vectors of equal length")

    def respects(self, dag: Dag) -> bool:
        off_support = np.ones(dag.d, dtype=bool)
        off_support[list(dag.parents)] = False
        return self.beta.shape == (dag.d,) and bool(np.all(self.beta[off_support] == 0))


@dataclass(frozen=True, eq=False)
class EnvSample:
    """Rows drawn from one environment"""
    env_id: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InvalidArgumentError(f"x must be n x d and y length n, got {x.shape} and {y.shape}")
        if x.shape[0] < x.shape[1] + 3:
            raise InsufficientSamplesError(
                f"environment {self.env_id!r} has n={x.shape[0]} rows, needs at least d + 3 = {x.shape[1] + 3}"
            )
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError(f"environment {self.env_id!r} contains non-finite values")
        object.__setattr__(self, "env_id", str(self.env_id))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def column(self, target: Union[int, str]) -> np.ndarray:
        """Column for an X index or the target ('y')"""
        if isinstance(target, str):
            if target.lower() != "y":
                raise InvalidArgumentError(f"unknown target {target!r}")
            return self.y
        return self.x[:, target]


@dataclass(frozen=True, eq=False)
class PopulationModel:
    """Exact moments of (X_1..X_d, Y) in one environment; Y is the last coordinate"""
    env_id: str
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "cov", _frozen(self.cov))

    @property
    def d(self) -> int:
        return self.mean.shape[0] - 1


# Random sources


def spawn_rngs(seed: Optional[int], n: int) -> List[np.random.Generator]:
    """Independent child streams, one per environment / dataset / task"""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(child) for child in children]


# Graph and parameter construction


def build_random_dag(
    d: int,
    edge_prob: float,
    n_parents_y: int,
    n_children_y: int,
    rng: np.random.Generator,
) -> Dag:
    """
    Random DAG over a uniformly random topological order.
    Y gets exactly n_parents_y parents (drawn from the X's before it) and
    n_children_y children (drawn from the X's after it); every X -> X pair
    consistent with the order is an edge with probability edge_prob.
    """
    if d < 2:
        raise InvalidArgumentError(f"d must be at least 2, got {d}")
    if n_parents_y < 1 or n_children_y < 1 or n_parents_y + n_children_y > d:
        raise InvalidArgumentError(
            f"need 1 <= n_parents_y, 1 <= n_children_y and n_parents_y + n_children_y <= d; "
            f"got {n_parents_y}, {n_children_y}, d={d}"
        )
    if not 0.0 <= edge_prob <= 1.0:
        raise InvalidArgumentError(f"edge_prob must lie in [0, 1], got {edge_prob}")

    order = rng.permutation(d)
    y_position = int(rng.integers(n_parents_y, d - n_children_y + 1))
    before, after = order[:y_position], order[y_position:]
    parents = rng.choice(before, size=n_parents_y, replace=False)
    children = rng.choice(after, size=n_children_y, replace=False)

    edges = set()
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < edge_prob:
                edges.add((int(order[a]), int(order[b])))

    dag = Dag(d=d, edges_xx=frozenset(edges), parents_y=frozenset(parents), children_y=frozenset(children))
    logger.debug(f"[SCM] DAG d={d}: PA(Y)={dag.parents} CH(Y)={dag.children} |E_xx|={len(edges)}")
    return dag


def _signed_uniform(rng: np.random.Generator, low: float, high: float, size: int) -> np.ndarray:
    signs = rng.choice(np.array([-1.0, 1.0]), size=size)
    return signs * rng.uniform(low, high, size=size)


def attach_parameters(
    dag: Dag,
    coeff_low: float,
    coeff_high: float,
    rng: np.random.Generator,
    noise_var_x: Optional[Sequence[float]] = None,
    noise_var_y: float = 1.0,
) -> ScmParams:
    """Nonzero coefficients are s * u, s uniform on {-1, +1}, u ~ U[coeff_low, coeff_high]"""
    if not 0 < coeff_low <= coeff_high:
        raise InvalidArgumentError(f"need 0 < coeff_low <= coeff_high, got [{coeff_low}, {coeff_high}]")
    d = dag.d
    alpha = np.zeros(d)
    children = list(dag.children)
    alpha[children] = _signed_uniform(rng, coeff_low, coeff_high, len(children))

    B = np.zeros((d, d))
    edges = sorted(dag.edges_xx)
    if edges:
        values = _signed_uniform(rng, coeff_low, coeff_high, len(edges))
        for (i, j), value in zip(edges, values):
            B[j, i] = value

    beta = np.zeros(d)
    parents = list(dag.parents)
    beta[parents] = _signed_uniform(rng, coeff_low, coeff_high, len(parents))

    noise_x = np.ones(d) if noise_var_x is None else np.asarray(noise_var_x, dtype=float)
    return ScmParams(dag=dag, alpha=alpha, B=B, beta_base=beta, noise_var_x=noise_x, noise_var_y=noise_var_y)


def _separated(values: np.ndarray, floor: float) -> bool:
    ordered = np.sort(values)
    return bool(np.all(np.diff(ordered) > floor))


def make_environments(
    params: ScmParams,
    n_envs: int,
    mode: Mode,
    perturb_low: float,
    perturb_high: float,
    n_x_interventions: int,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> List[EnvSpec]:
    """
    Environment specs with every parent coefficient of Y perturbed and Y shifted.
    Mode "B" also shifts one random subset of n_x_interventions X's (the same
    subset in every environment, fresh shift values per environment).
    Perturbations of each parent coefficient are redrawn until all environments
    are pairwise separated by more than 1e-9.
    """
    mode = str(mode).upper()
    d = params.d
    if mode not in ("A", "B"):
        raise InvalidArgumentError(f"mode must be 'A' or 'B', got {mode!r}")
    if n_envs < 2:
        raise InvalidArgumentError(f"n_envs must be at least 2, got {n_envs}")
    if not perturb_high > perturb_low >= 0:
        raise InvalidArgumentError(
            f"need perturb_high > perturb_low >= 0, got [{perturb_low}, {perturb_high}]"
        )
    if mode == "B" and not 0 <= n_x_interventions <= d:
        raise InvalidArgumentError(f"n_x_interventions must lie in [0, {d}], got {n_x_interventions}")

    betas = np.tile(params.beta_base, (n_envs, 1))
    for j in params.dag.parents:
        for _ in range(max_attempts):
            delta = rng.uniform(perturb_low, perturb_high, size=n_envs)
            if _separated(params.beta_base[j] + delta, CONDITION_FIVE_FLOOR):
                betas[:, j] = params.beta_base[j] + delta
                break
        else:
            raise InvalidArgumentError(
                f"could not separate coefficient of parent {j} across environments in {max_attempts} draws"
            )

    shift_y = rng.uniform(perturb_low, perturb_high, size=n_envs)
    shift_x = np.zeros((n_envs, d))
    if mode == "B" and n_x_interventions > 0:
        targets = np.sort(rng.choice(d, size=n_x_interventions, replace=False))
        shift_x[:, targets] = rng.uniform(perturb_low, perturb_high, size=(n_envs, n_x_interventions))
        logger.debug(f"[SCM] mode B shifts X indices {targets.tolist()}")

    return [
        EnvSpec(env_id=f"env{e + 1}", beta=betas[e], shift_y=shift_y[e], shift_x=shift_x[e])
        for e in range(n_envs)
    ]


# Sampling and moments


def structural_matrix(params: ScmParams, spec: EnvSpec) -> np.ndarray:
    """A_e = [[I - B, -alpha], [-beta_e^T, 1]]"""
    d = params.d
    if not spec.respects(params.dag):
        raise InvalidArgumentError(f"beta of {spec.env_id!r} violates the sparsity of PA(Y)")
    A = np.eye(d + 1)
    A[:d, :d] -= params.B
    A[:d, d] = -params.alpha
    A[d, :d] = -spec.beta
    if not np.isfinite(np.linalg.cond(A)):
        raise NumericalFailureError(f"structural matrix of {spec.env_id!r} is singular")
    return A


def _noise_variances(params: ScmParams) -> np.ndarray:
    return np.append(params.noise_var_x, params.noise_var_y)


def _offsets(spec: EnvSpec) -> np.ndarray:
    return np.append(spec.shift_x, spec.shift_y)


def sample_environment(params: ScmParams, spec: EnvSpec, n: int, rng: np.random.Generator) -> EnvSample:
    """n i.i.d. rows W = A_e^{-1}(eps + shifts)"""
    d = params.d
    if n < d + 3:
        raise InsufficientSamplesError(f"n must be at least d + 3 = {d + 3}, got {n}")
    A = structural_matrix(params, spec)
    noise = rng.standard_normal((n, d + 1)) * np.sqrt(_noise_variances(params)) + _offsets(spec)
    try:
        W = np.linalg.solve(A, noise.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"solve failed for {spec.env_id!r}: {exc}") from exc
    return EnvSample(env_id=spec.env_id, x=W[:, :d], y=W[:, d])


def population_model(params: ScmParams, spec: EnvSpec) -> PopulationModel:
    A = structural_matrix(params, spec)
    try:
        A_inv = np.linalg.solve(A, np.eye(params.d + 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"solve failed for {spec.env_id!r}: {exc}") from exc
    cov = A_inv @ np.diag(_noise_variances(params)) @ A_inv.T
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise NumericalFailureError(f"population covariance of {spec.env_id!r} is not positive definite")
    return PopulationModel(env_id=spec.env_id, mean=A_inv @ _offsets(spec), cov=cov)


# Serialization


def scm_to_dict(params: ScmParams, specs: Iterable[EnvSpec] = ()) -> Dict:
    dag = params.dag
    return {
        "d": dag.d,
        "edges_xx": [list(edge) for edge in sorted(dag.edges_xx)],
        "parents_y": list(dag.parents),
        "children_y": list(dag.children),
        "alpha": params.alpha.tolist(),
        "B": params.B.tolist(),
        "beta_base": params.beta_base.tolist(),
        "noise_var_x": params.noise_var_x.tolist(),
        "noise_var_y": params.noise_var_y,
        "environments": [
            {"env_id": s.env_id, "beta": s.beta.tolist(), "shift_y": s.shift_y, "shift_x": s.shift_x.tolist()}
            for s in specs
        ],
    }


def scm_to_json(params: ScmParams, specs: Iterable[EnvSpec] = ()) -> str:
    return json.dumps(scm_to_dict(params, specs), indent=2, sort_keys=True)


def scm_from_json(text: str) -> Tuple[ScmParams, List[EnvSpec]]:
    try:
        data = json.loads(text)
        dag = Dag(
            d=int(data["d"]),
            edges_xx=frozenset(tuple(edge) for edge in data["edges_xx"]),
            parents_y=frozenset(data["parents_y"]),
            children_y=frozenset(data["children_y"]),
        )
        params = ScmParams(
            dag=dag,
            alpha=np.array(data["alpha"]),
            B=np.array(data["B"]),
            beta_base=np.array(data["beta_base"]),
            noise_var_x=np.array(data["noise_var_x"]),
            noise_var_y=data["noise_var_y"],
        )
        specs = [
            EnvSpec(env_id=e["env_id"], beta=np.array(e["beta"]), shift_y=e["shift_y"], shift_x=np.array(e["shift_x"]))
            for e in data.get("environments", [])
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"malformed SCM description: {exc}") from exc
    return params, specs


def feature_labels(d: int) -> List[str]:
    return [f"x{j + 1}" for j in range(d)]


def samples_to_frame(samples: Sequence[EnvSample], feature_names: Optional[Sequence[str]] = None,
                     target_name: str = "y", env_column: str = "env") -> pd.DataFrame:
    """Long table: one row per observation, environment label first"""
    if not samples:
        raise InvalidArgumentError("no samples to export")
    names = list(feature_names) if feature_names is not None else feature_labels(samples[0].d)
    frames = []
    for sample in samples:
        frame = pd.DataFrame(sample.x, columns=names)
        frame.insert(0, env_column, sample.env_id)
        frame[target_name] = sample.y
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def export_samples_csv(samples: Sequence[EnvSample], path: Union[str, Path]) -> Path:
    """CSV with header env,x1,...,xd,y"""
    path = Path(path)
    samples_to_frame(samples).to_csv(path, index=False)
    return path
