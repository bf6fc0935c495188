"""Dataset loading, splitting, train-only standardization, and threshold inversion.

Standardization statistics are computed on the training split only and reused
verbatim for the test split; thresholds learned in z-space map back to natural
units through the same statistics, b_raw = mu + sigma * b_z.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .expr import Node, evaluate

# Canonical seed list used when a run does not specify its own.
CANONICAL_SEEDS = (1, 2, 3, 5, 8, 13, 21, 34, 55, 89)

DEFAULT_TEST_FRACTION = 0.2

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass
class Dataset:
    feature_names: list[str]
    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    units: dict[str, str] = field(default_factory=dict)
    name: str = ""
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return int(self.X.shape[0])


@dataclass
class FeatureStats:
    """Per-feature mean and standard deviation from the training split.

    Standard deviations use the sample convention (ddof=1). Constant columns
    are passed through unstandardized (mu=0, sigma=1) and recorded by name.
    """

    feature_names: list[str]
    mu: np.ndarray
    sigma: np.ndarray
    computed_on: str = "train"
    constant_features: tuple[str, ...] = ()

    def index_of(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise DataError("unknown feature %r in stats lookup" % (feature,)) from None


@dataclass
class SubexprStats:
    """Training-fold moments of a gated subexpression, used to invert its threshold."""

    mu: float
    sigma: float
    invertible: bool


def load_csv(path, target_column: str, task: str = "regression", name: str = "") -> Dataset:
    """Read a numeric CSV with a header row.

    Rows containing missing or unparseable cells are dropped listwise and
    counted in Dataset.n_dropped. A column whose every value fails to parse is
    treated as non-numeric and rejected.
    """
    if task not in ("regression", "binary"):
        raise DataError("unknown task %r (expected 'regression' or 'binary')" % (task,))
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty CSV file %r" % (str(path),)) from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError("target column %r not found in %r" % (target_column, str(path)))
        rows = []
        dropped = 0
        parsed_per_col = [0] * len(header)
        for raw in reader:
            if not raw or all(cell.strip() == "" for cell in raw):
                continue
            if len(raw) != len(header):
                dropped += 1
                continue
            vals = []
            ok = True
            for j, cell in enumerate(raw):
                cell = cell.strip()
                if cell.lower() in _MISSING_TOKENS:
                    ok = False
                    continue
                try:
                    vals.append(float(cell))
                    parsed_per_col[j] += 1
                except ValueError:
                    ok = False
            if ok and len(vals) == len(header):
                rows.append(vals)
            else:
                dropped += 1
    for j, count in enumerate(parsed_per_col):
        if count == 0:
            raise DataError("column %r is non-numeric and cannot be coerced" % (header[j],))
    if not rows:
        raise DataError("no usable rows in %r after dropping %d incomplete rows" % (str(path), dropped))
    mat = np.asarray(rows, dtype=float)
    t_idx = header.index(target_column)
    feat_idx = [j for j in range(len(header)) if j != t_idx]
    ds_name = name or _stem(path)
    return Dataset(
        feature_names=[header[j] for j in feat_idx],
        X=mat[:, feat_idx],
        y=mat[:, t_idx],
        task=task,
        name=ds_name,
        n_dropped=dropped,
    )


def _stem(path) -> str:
    base = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return base.rsplit(".", 1)[0] if "." in base else base


def split(dataset: Dataset, seed: int, test_fraction: float = DEFAULT_TEST_FRACTION):
    """Deterministic train/test split; disjoint, exhaustive, reproducible by seed."""
    n = dataset.n
    if not 0.0 < test_fraction < 1.0:
        raise DataError("test_fraction must be inside (0, 1), got %r" % (test_fraction,))
    n_test = int(np.floor(n * test_fraction + 0.5))
    if n_test < 1 or n - n_test < 2:
        raise DataError("dataset too small to split: n=%d, test_fraction=%s" % (n, test_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    train = replace(dataset, X=dataset.X[train_idx], y=dataset.y[train_idx], n_dropped=0)
    test = replace(dataset, X=dataset.X[test_idx], y=dataset.y[test_idx], n_dropped=0)
    return train, test


def standardize(train: Dataset, test: Dataset | None = None):
    """z-score features with train-only statistics.

    Returns (z_train, z_test, stats); z_test is None when no test split is
    given. Constant training columns would produce sigma = 0, so they are
    passed through unchanged with a warning and recorded in the stats.
    """
    X = train.X
    if X.shape[0] < 2:
        raise DataError("standardize needs at least 2 training rows")
    mu = X.mean(axis=0)
    sigma = X.std(axis=0, ddof=1)
    constant = []
    for j, s in enumerate(sigma):
        if not np.isfinite(s) or s <= 0.0:
            constant.append(train.feature_names[j])
            mu[j] = 0.0
            sigma[j] = 1.0
    if constant:
        warnings.warn(
            "constant feature(s) passed through unstandardized: %s" % (", ".join(constant),),
            stacklevel=2,
        )
    stats = FeatureStats(
        feature_names=list(train.feature_names),
        mu=mu,
        sigma=sigma,
        constant_features=tuple(constant),
    )
    z_train = replace(train, X=(train.X - mu) / sigma)
    z_test = None
    if test is not None:
        z_test = replace(test, X=(test.X - mu) / sigma)
    return z_train, z_test, stats


def destandardize(z: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Inverse transform; round-trips with standardize to float precision."""
    return z * stats.sigma + stats.mu


def invert_threshold(b_z: float, feature: str, stats: FeatureStats) -> float:
    """Map a z-space threshold to natural units: b_raw = mu + sigma * b_z."""
    j = stats.index_of(feature)
    return float(stats.mu[j] + stats.sigma[j] * b_z)


def fit_subexpr_stats(subtree: Node, z_train_X: np.ndarray) -> SubexprStats:
    """Training-fold mean/std of a gated subexpression's value.

    A degenerate (constant or non-finite) subexpression is flagged
    non-invertible rather than inverted through a zero sigma.
    """
    vals = evaluate(subtree, z_train_X)
    if not np.all(np.isfinite(vals)) or vals.shape[0] < 2:
        return SubexprStats(float("nan"), float("nan"), False)
    mu = float(vals.mean())
    sigma = float(vals.std(ddof=1))
    if not np.isfinite(sigma) or sigma <= 1e-12:
        return SubexprStats(mu, sigma, False)
    return SubexprStats(mu, sigma, True)
