"""
Parent Discovery - Dataset Ingestion
Multi-environment CSV datasets (one row per observation, one label column
naming the environment) and the reproducibility manifest written next to
every run's outputs.
"""

import hashlib
import json
import platform
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from DiscoveryErrors import (
    DatasetParseError,
    InvalidArgumentError,
    MissingColumnError,
    TooFewRowsError,
)
from StructuralCausalModel import EnvSample, samples_to_frame

TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "networkx", "joblib", "pydantic", "loguru")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Named features and target, one EnvSample per environment label"""
    feature_names: Tuple[str, ...]
    target_name: str
    samples: Tuple[EnvSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) < 2:
            raise InvalidArgumentError(f"a dataset needs at least 2 environments, got {len(self.samples)}")
        labels = self.env_labels
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"environment labels must be unique: {list(labels)}")
        if any(s.d != len(self.feature_names) for s in self.samples):
            raise InvalidArgumentError("every environment must have one column per feature name")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise InvalidArgumentError("feature names must be unique")

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def env_labels(self) -> Tuple[str, ...]:
        return tuple(s.env_id for s in self.samples)

    def same_as(self, other: "Dataset") -> bool:
        """Exact equality of names, labels and every value"""
        if (self.feature_names, self.target_name, self.env_labels) != (
            other.feature_names, other.target_name, other.env_labels
        ):
            return False
        return all(
            np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) for a, b in zip(self.samples, other.samples)
        )


def _require_columns(header: Sequence[str], names: Sequence[str], path: Path) -> None:
    missing = [name for name in names if name not in header]
    if missing:
        raise MissingColumnError(f"{path}: missing column(s) {missing}; header is {list(header)}")


def _numeric_block(frame: pd.DataFrame, columns: Sequence[str], path: Path) -> np.ndarray:
    """Numeric values of the given columns; first bad cell raises with its CSV line"""
    values = np.empty((len(frame), len(columns)))
    for i, name in enumerate(columns):
        raw = frame[name]
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = np.flatnonzero(~np.isfinite(parsed.to_numpy(dtype=float)))
        if bad.size:
            row = int(bad[0]) + 2  # header is line 1
            cell = raw.iloc[bad[0]]
            raise DatasetParseError(
                f"{path}: line {row}, column {name!r}: cannot parse {cell!r} as a finite number",
                row=row,
                column=name,
            )
        values[:, i] = parsed.to_numpy(dtype=float)
    return values


def ingest_csv(
    path: Union[str, Path],
    env_column: str = "env",
    target_column: str = "y",
    feature_columns: Optional[Sequence[str]] = None,
    max_rows_per_env: Optional[int] = None,
) -> Dataset:
    """
    Split a CSV by environment label.

    Features default to every column except the environment and target
    columns, in header order. Environments keep their order of first
    appearance; with max_rows_per_env each keeps its first n rows.
    Discrete features are read as plain numbers.
    """
    path = Path(path)
    if not path.is_file():
        raise InvalidArgumentError(f"{path}: no such file")
    if max_rows_per_env is not None and max_rows_per_env < 1:
        raise InvalidArgumentError(f"max_rows_per_env must be positive, got {max_rows_per_env}")

    try:
        header = [str(c) for c in pd.read_csv(path, nrows=0).columns]
        _require_columns(header, [env_column, target_column], path)
        frame = pd.read_csv(path, dtype={env_column: str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetParseError(f"{path}: {exc}") from exc

    if feature_columns is None:
        features = [c for c in header if c not in (env_column, target_column)]
    else:
        features = list(feature_columns)
        _require_columns(header, features, path)
    if not features:
        raise InvalidArgumentError(f"{path}: no feature columns")
    if env_column in features or target_column in features:
        raise InvalidArgumentError("feature columns cannot include the environment or target column")

    labels = frame[env_column]
    if labels.isna().any():
        row = int(np.flatnonzero(labels.isna().to_numpy())[0]) + 2
        raise DatasetParseError(f"{path}: line {row}: empty environment label", row=row, column=env_column)

    x_all = _numeric_block(frame, features, path)
    y_all = _numeric_block(frame, [target_column], path)[:, 0]

    d = len(features)
    samples: List[EnvSample] = []
    for label in pd.unique(labels):
        rows = np.flatnonzero(labels.to_numpy() == label)
        if max_rows_per_env is not None:
            rows = rows[:max_rows_per_env]
        if rows.size < d + 3:
            raise TooFewRowsError(
                f"environment {label!r} has {rows.size} rows; {d} features need at least {d + 3}",
                environment=str(label),
            )
        samples.append(EnvSample(env_id=str(label), x=x_all[rows], y=y_all[rows]))

    if len(samples) < 2:
        raise InvalidArgumentError(f"{path}: need at least 2 environments in column {env_column!r}, got {len(samples)}")

    logger.info(
        f"[Ingest] {path.name}: {len(samples)} environments, {d} features, "
        f"rows per environment {[s.n for s in samples]}"
    )
    return Dataset(feature_names=tuple(features), target_name=target_column, samples=tuple(samples))


def export_dataset_csv(dataset: Dataset, path: Union[str, Path], env_column: str = "env") -> Path:
    """Write a dataset so that ingest_csv reproduces it exactly"""
    path = Path(path)
    frame = samples_to_frame(dataset.samples, dataset.feature_names, dataset.target_name, env_column)
    frame.to_csv(path, index=False)
    return path


# Manifest


def file_digest(path: Union[str, Path]) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            sha.update(block)
    return sha.hexdigest()


def package_versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = None
    versions: Dict[str, str] = Field(default_factory=package_versions)
    input_path: Optional[str] = None
    input_digest: Optional[str] = None
    created_at: str
    outputs: List[str] = Field(default_factory=list)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path
