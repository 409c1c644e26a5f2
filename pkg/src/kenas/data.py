"""Dataset loading, splitting and synthetic generators.

Features are standardized per column at load time (columns with zero
spread map to zeros and record std 0); targets stay raw so accuracy is
reported on the original scale.  Splits follow a 40/60 train/test
convention with a validation slice carved out of the training part.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import KenasError


@dataclass
class Dataset:
    name: str
    features: np.ndarray  # [n, d], standardized
    targets: np.ndarray  # [n], raw
    feature_means: np.ndarray
    feature_stds: np.ndarray  # 0 marks a constant column
    feature_names: list[str]
    target_name: str

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    def raw_features(self) -> np.ndarray:
        """Undo standardization (constant columns come back exactly)."""
        return self.features * np.where(self.feature_stds == 0.0, 1.0, self.feature_stds) + self.feature_means


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.40
    test_fraction: float = 0.60
    validation_fraction_of_train: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("train_fraction", "test_fraction", "validation_fraction_of_train"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise KenasError(f"{name} must lie in (0, 1), got {v}")
        if abs(self.train_fraction + self.test_fraction - 1.0) > 1e-9:
            raise KenasError("train_fraction + test_fraction must equal 1.0")


@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def _standardize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    stds = np.where(stds < 1e-12, 0.0, stds)
    scaled = (raw - means) / np.where(stds == 0.0, 1.0, stds)
    scaled[:, stds == 0.0] = 0.0
    return scaled, means, stds


def make_dataset(
    name: str,
    raw_features: np.ndarray,
    targets: np.ndarray,
    feature_names: list[str] | None = None,
    target_name: str = "target",
) -> Dataset:
    raw = np.asarray(raw_features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if raw.ndim != 2 or raw.shape[1] < 1:
        raise KenasError("features must form an [n, d] matrix with d >= 1")
    if raw.shape[0] != y.shape[0]:
        raise KenasError("feature and target row counts differ")
    if raw.shape[0] < 5:
        raise KenasError(f"dataset needs at least 5 rows, got {raw.shape[0]}")
    if not np.all(np.isfinite(raw)) or not np.all(np.isfinite(y)):
        raise KenasError("dataset contains non-finite values")
    scaled, means, stds = _standardize(raw)
    names = feature_names or [f"x{i}" for i in range(raw.shape[1])]
    return Dataset(name, scaled, y, means, stds, list(names), target_name)


def load_csv(path: str, target_column: str) -> Dataset:
    """Read a numeric CSV with header; standardize features, keep targets raw."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise KenasError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        if target_column not in header:
            raise KenasError(f"{path}: target column {target_column!r} not in header {header}")
        t_idx = header.index(target_column)
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise KenasError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise KenasError(f"{path}: missing value at row {lineno}, column {col!r}")
                try:
                    values.append(float(cell))
                except ValueError:
                    raise KenasError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {col!r}"
                    ) from None
            rows.append(values)
    if not rows:
        raise KenasError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    mask = np.ones(len(header), dtype=bool)
    mask[t_idx] = False
    name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return make_dataset(
        name,
        table[:, mask],
        table[:, t_idx],
        [h for h, keep in zip(header, mask) if keep],
        target_column,
    )


def save_csv(path: str, features: np.ndarray, targets: np.ndarray, feature_names=None, target_name="target") -> None:
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    names = list(feature_names or [f"x{i}" for i in range(features.shape[1])])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + [target_name])
        for row, y in zip(features, targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(ds: Dataset, spec: SplitSpec) -> Split:
    """Seeded shuffle into disjoint, exhaustive test / validation / train indices.

    Sizes: |test| = round-half-up(test_fraction * n); the validation
    slice is carved out of the remaining training part the same way.
    """
    n = ds.n
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_test = _round_half_up(spec.test_fraction * n)
    test = perm[:n_test]
    remaining = perm[n_test:]
    n_val = _round_half_up(spec.validation_fraction_of_train * len(remaining))
    validation = remaining[:n_val]
    train = remaining[n_val:]
    if len(train) < 2 or len(test) < 2:
        raise KenasError(
            f"split of {n} rows leaves train={len(train)}, test={len(test)}; need >= 2 rows each"
        )
    return Split(np.sort(train), np.sort(validation), np.sort(test))


SYNTH_KINDS = ("linear", "friedman-like", "piecewise")


def synth_raw(kind: str, n: int, d: int, noise_std: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw (features, targets) for the documented closed-form generators.

    linear:        y = X w + 0.5,  X ~ N(0,1),  w_j = 1 + j/2
    friedman-like: y = 10 sin(pi x0 x1) + 20 (x2 - 0.5)^2 + 10 x3 + 5 x4,  X ~ U(0,1), d >= 5
    piecewise:     y = 2 + 3 x1 if x0 > 0 else -1 - 2 x1,  X ~ N(0,1), d >= 2
    """
    if n < 5:
        raise KenasError("synthetic datasets need n >= 5")
    if kind not in SYNTH_KINDS:
        raise KenasError(f"kind must be one of {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "linear":
        x = rng.standard_normal((n, d))
        w = 1.0 + 0.5 * np.arange(d)
        y = x @ w + 0.5
    elif kind == "friedman-like":
        if d < 5:
            raise KenasError("friedman-like needs d >= 5")
        x = rng.uniform(0.0, 1.0, size=(n, d))
        y = 10.0 * np.sin(np.pi * x[:, 0] * x[:, 1]) + 20.0 * (x[:, 2] - 0.5) ** 2 + 10.0 * x[:, 3] + 5.0 * x[:, 4]
    else:
        if d < 2:
            raise KenasError("piecewise needs d >= 2")
        x = rng.standard_normal((n, d))
        y = np.where(x[:, 0] > 0.0, 2.0 + 3.0 * x[:, 1], -1.0 - 2.0 * x[:, 1])
    if noise_std > 0:
        y = y + rng.normal(0.0, noise_std, size=n)
    return x, y


def synth_dataset(kind: str, n: int, d: int, noise_std: float, seed: int) -> Dataset:
    x, y = synth_raw(kind, n, d, noise_std, seed)
    return make_dataset(f"synth-{kind}", x, y)
