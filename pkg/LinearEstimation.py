"""
Parent Discovery - Linear Estimation
OLS fits on samples and exact LMMSE coefficients on population moments, both
embedded in the common (intercept, x_1..x_d) coefficient space.
"""

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from DiscoveryErrors import InsufficientSamplesError, InvalidArgumentError, RankDeficiencyError, SingularMatrixError
from StructuralCausalModel import EnvSample, PopulationModel

Target = Union[int, str]

RANK_TOLERANCE = 1e-10
POPULATION_CONDITION_LIMIT = 1e12


def normalize_set(indices: Iterable[int]) -> Tuple[int, ...]:
    return tuple(sorted({int(j) for j in indices}))


def _target_label(target: Target) -> str:
    return "y" if isinstance(target, str) else f"x{target + 1}"


@dataclass(frozen=True, eq=False)
class EmbeddedCoeffs:
    """Affine predictor intercept + coef^T x with coef zero outside cond_set"""
    intercept: float
    coef: np.ndarray
    cond_set: Tuple[int, ...] = ()

    @property
    def d(self) -> int:
        return self.coef.shape[0]

    def vector(self) -> np.ndarray:
        """(intercept, coef_1..coef_d)"""
        return np.concatenate(([self.intercept], self.coef))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x) @ self.coef

    @classmethod
    def from_vector(cls, vector: np.ndarray, cond_set: Sequence[int] = ()) -> "EmbeddedCoeffs":
        vector = np.asarray(vector, dtype=float)
        return cls(intercept=float(vector[0]), coef=vector[1:].copy(), cond_set=normalize_set(cond_set))


@dataclass(frozen=True, eq=False)
class CoeffCovariance:
    """Covariance of (intercept, coef[cond_set]) with residual degrees of freedom"""
    matrix: np.ndarray
    df: int
    cond_set: Tuple[int, ...] = ()

    def positions(self) -> np.ndarray:
        """Coordinates of this block inside the (d + 1) embedded space"""
        return np.array([0] + [j + 1 for j in self.cond_set], dtype=int)

    def embedded(self, d: int) -> np.ndarray:
        full = np.zeros((d + 1, d + 1))
        pos = self.positions()
        full[np.ix_(pos, pos)] = self.matrix
        return full


class OlsResult(NamedTuple):
    coeffs: EmbeddedCoeffs
    covariance: CoeffCovariance
    residuals: np.ndarray


class DesignFit(NamedTuple):
    beta: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    df: int


def fit_design(design: np.ndarray, response: np.ndarray, labels: Optional[Sequence[str]] = None) -> DesignFit:
    """
    Least squares on an explicit design matrix.
    Covariance is the classical sigma^2 (Z^T Z)^{-1}; rank is checked with a
    relative singular-value threshold.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    n, p = design.shape
    if n <= p:
        raise InsufficientSamplesError(f"need more than {p} rows for {p} regression columns, got {n}")
    labels = list(labels) if labels is not None else [f"col{i}" for i in range(p)]

    _, singular, vt = np.linalg.svd(design, full_matrices=False)
    if singular[-1] <= RANK_TOLERANCE * singular[0]:
        null_direction = vt[-1]
        collinear = [labels[i] for i in np.flatnonzero(np.abs(null_direction) > 1e-6)]
        raise RankDeficiencyError(f"design matrix is rank deficient; collinear columns: {collinear}", collinear)

    beta, *_ = np.linalg.lstsq(design, response, rcond=None)
    residuals = response - design @ beta
    df = n - p
    sigma2 = float(residuals @ residuals) / df
    gram_inv = (vt.T / singular**2) @ vt
    return DesignFit(beta=beta, covariance=sigma2 * gram_inv, residuals=residuals, df=df)


def design_matrix(sample: EnvSample, cond_set: Sequence[int]) -> np.ndarray:
    return np.column_stack([np.ones(sample.n), sample.x[:, list(cond_set)]])


def ols_fit(sample: EnvSample, target: Target, cond_set: Iterable[int]) -> OlsResult:
    """Regress the target (X index or 'y') on an intercept and X_cond_set"""
    cond = normalize_set(cond_set)
    if not isinstance(target, str) and target in cond:
        raise InvalidArgumentError(f"target x{target + 1} cannot be in its own conditioning set")
    if any(j < 0 or j >= sample.d for j in cond):
        raise InvalidArgumentError(f"conditioning set {cond} out of range for d={sample.d}")
    labels = ["intercept"] + [f"x{j + 1}" for j in cond]
    fit = fit_design(design_matrix(sample, cond), sample.column(target), labels)

    coef = np.zeros(sample.d)
    coef[list(cond)] = fit.beta[1:]
    coeffs = EmbeddedCoeffs(intercept=float(fit.beta[0]), coef=coef, cond_set=cond)
    covariance = CoeffCovariance(matrix=fit.covariance, df=fit.df, cond_set=cond)
    return OlsResult(coeffs, covariance, fit.residuals)


def cross_covariance(sample: EnvSample, first: OlsResult, second: OlsResult) -> np.ndarray:
    """
    Cov(first coefficients, second coefficients) for two regressions fitted on
    the same rows, using the residual cross-moment as the error covariance.
    Shape is (|S_first| + 1, |S_second| + 1).
    """
    Z1 = design_matrix(sample, first.coeffs.cond_set)
    Z2 = design_matrix(sample, second.coeffs.cond_set)
    scale = np.sqrt(first.covariance.df * second.covariance.df)
    sigma12 = float(first.residuals @ second.residuals) / scale
    left = np.linalg.solve(Z1.T @ Z1, Z1.T)
    right = np.linalg.solve(Z2.T @ Z2, Z2.T)
    return sigma12 * left @ right.T


def population_lmmse(pop: PopulationModel, target: Target, cond_set: Iterable[int]) -> EmbeddedCoeffs:
    """Exact LMMSE: coef_S = Sigma_SS^{-1} sigma_{S,t}, intercept = mu_t - coef_S^T mu_S"""
    d = pop.d
    cond = normalize_set(cond_set)
    t = d if isinstance(target, str) else int(target)
    if t in cond:
        raise InvalidArgumentError(f"target {_target_label(target)} cannot be in its own conditioning set")
    coef = np.zeros(d)
    if not cond:
        return EmbeddedCoeffs(intercept=float(pop.mean[t]), coef=coef, cond_set=cond)

    idx = list(cond)
    block = pop.cov[np.ix_(idx, idx)]
    condition = np.linalg.cond(block)
    if not np.isfinite(condition) or condition > POPULATION_CONDITION_LIMIT:
        raise SingularMatrixError(f"covariance submatrix on {[f'x{j + 1}' for j in idx]} is singular")
    restricted = np.linalg.solve(block, pop.cov[idx, t])
    coef[idx] = restricted
    intercept = float(pop.mean[t] - restricted @ pop.mean[idx])
    return EmbeddedCoeffs(intercept=intercept, coef=coef, cond_set=cond)
