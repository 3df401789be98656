"""Datasets: the cubic toy problem, CSV ingestion for tabular benchmarks,
fold splitting, and feature/target standardization.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .numcore import Rng

log = logging.getLogger(__name__)

TOY_X_RANGE = (-4.0, 4.0)
TOY_NOISE_STD = 3.0


@dataclass
class Dataset:
    name: str
    X: np.ndarray  # (N, Q)
    y: np.ndarray  # (N,)
    feature_names: Optional[list[str]] = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"inconsistent dataset shapes X{self.X.shape} y{self.y.shape}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError(f"dataset {self.name!r} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]


def gen_toy(
    rng: Rng,
    n_train: int = 100,
    noise_std: float = TOY_NOISE_STD,
    n_test: int = 100,
) -> tuple[Dataset, Dataset]:
    """Cubic toy problem: train x ~ U[-4, 4], y = x^3 + N(0, noise_std^2);
    test x evenly spaced on [-4, 4] with the noiseless cubic as reference."""
    if n_train < 1:
        raise DataError("need at least one training point")
    gen = rng.substream("toy-noise")
    lo, hi = TOY_X_RANGE
    x_train = gen.uniform(lo, hi, size=n_train)
    y_train = x_train**3 + noise_std * gen.standard_normal(n_train)
    x_test = np.linspace(lo, hi, n_test)
    y_test = x_test**3
    train = Dataset("toy-train", x_train[:, None], y_train)
    test = Dataset("toy-test", x_test[:, None], y_test)
    return train, test


def load_csv(path, target_column: str) -> Dataset:
    """Numeric CSV with a header row; rows with any unparseable cell are
    dropped (with a logged count)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header {header}")
        target_idx = header.index(target_column)
        rows = []
        n_rejected = 0
        for raw in reader:
            if len(raw) != len(header):
                n_rejected += 1
                continue
            try:
                rows.append([float(cell) for cell in raw])
            except ValueError:
                n_rejected += 1
    if n_rejected:
        log.warning("%s: rejected %d unparseable row(s)", path, n_rejected)
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    table = np.asarray(rows, dtype=np.float64)
    y = table[:, target_idx]
    X = np.delete(table, target_idx, axis=1)
    features = [h for i, h in enumerate(header) if i != target_idx]
    return Dataset(path.stem, X, y, feature_names=features)


@dataclass(frozen=True)
class FoldSplit:
    """One random partition of 0..n-1 into train/validation/test indices."""

    fold: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def make_folds(
    n: int, n_folds: int, rng: Rng, val_fraction: float = 0.2
) -> list[FoldSplit]:
    """Independent random permutations; per fold the last floor(0.1*n) indices
    are test, the last floor(val_fraction * remainder) of the rest are
    validation, and everything else is train."""
    if n_folds < 1:
        raise DataError("need at least one fold")
    if not 0.0 <= val_fraction < 1.0:
        raise DataError("val_fraction must be in [0, 1)")
    n_test = int(0.1 * n)
    n_val = int(val_fraction * (n - n_test))
    n_train = n - n_test - n_val
    if n < 10 or n_test < 1 or n_train < 1:
        raise DataError(f"n={n} is too small for a {n_folds}-fold 90/10 protocol")
    folds = []
    for i in range(n_folds):
        perm = rng.substream("folds", i).permutation(n)
        test = perm[n - n_test:]
        rest = perm[: n - n_test]
        val = rest[len(rest) - n_val:]
        train = rest[: len(rest) - n_val]
        folds.append(FoldSplit(fold=i, train=train, val=val, test=test))
    return folds


@dataclass
class Standardizer:
    """Affine feature/target scaling fitted on training rows only.

    Zero-variance features pass through unscaled; the same rule guards the
    target so inverse(transform(y)) is always the identity.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray) -> "Standardizer":
        if X.shape[0] < 2:
            raise DataError("need at least two rows to standardize")
        x_mean = X.mean(axis=0)
        x_std = X.std(axis=0)
        x_scale = np.where(x_std > 0.0, x_std, 1.0)
        y_std = float(y.std())
        return cls(
            x_mean=x_mean,
            x_scale=x_scale,
            y_mean=float(y.mean()),
            y_scale=y_std if y_std > 0.0 else 1.0,
        )

    def transform_x(self, X: np.ndarray) -> np.ndarray:
        return (X - self.x_mean) / self.x_scale

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_scale

    def inverse_y(self, y_std: np.ndarray) -> np.ndarray:
        return y_std * self.y_scale + self.y_mean


def standardize(train: Dataset) -> tuple[Standardizer, Dataset]:
    """Fit on the training set and return it transformed (features and target)."""
    scaler = Standardizer.fit(train.X, train.y)
    out = Dataset(
        train.name,
        scaler.transform_x(train.X),
        scaler.transform_y(train.y),
        feature_names=train.feature_names,
    )
    return scaler, out


def nll_rescale(nll_std: float, y_scale: float):
    """Change of variables for densities: an NLL computed on standardized
    targets becomes original-unit NLL by adding log(y_scale)."""
    if y_scale <= 0.0:
        raise DataError("y_scale must be positive")
    return nll_std + np.log(y_scale)


# ---------------------------------------------------------------------------
# Benchmark manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    file: str
    target: str
    n: int
    q: int
    folds: Optional[int] = None  # override of the configured fold count


def load_manifest(path) -> dict[str, ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = {}
    for name, spec in raw.items():
        try:
            entries[name] = ManifestEntry(
                name=name,
                file=spec["file"],
                target=spec["target"],
                n=int(spec["n"]),
                q=int(spec["q"]),
                folds=int(spec["folds"]) if "folds" in spec else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"manifest entry {name!r} is malformed: {exc}") from exc
    if not entries:
        raise DataError(f"{path}: manifest lists no datasets")
    return entries


def load_benchmark(entry: ManifestEntry, base_dir) -> Dataset:
    """Load a manifest dataset and hard-verify its declared size and width."""
    csv_path = Path(base_dir) / entry.file
    ds = load_csv(csv_path, entry.target)
    if ds.n != entry.n or ds.q != entry.q:
        raise DataError(
            f"{entry.name}: expected N={entry.n}, Q={entry.q}, "
            f"but {csv_path} has N={ds.n}, Q={ds.q}"
        )
    return Dataset(entry.name, ds.X, ds.y, feature_names=ds.feature_names)
