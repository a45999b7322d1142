"""Synthetic class-mismatched benchmarks and CSV ingestion of feature datasets.

ID and OOD classes are isotropic Gaussian clusters whose means are random
directions on the unit sphere scaled by the class separation. Every class
draws from its own derived seed, so classes can be generated independently.
"""

import math
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.datasets import make_blobs

import config as cfg
import utils
from labels import SampleBatch

SPLIT_TAGS = ("labeled", "unlabeled", "test")


class SpecError(ValueError):
    """A benchmark spec field is out of range."""

    def __init__(self, key, msg):
        self.key = key
        super().__init__(f"{key}: {msg}")


class CsvFormatError(ValueError):
    """A feature CSV file is malformed. `line` is the 1-based file line."""

    def __init__(self, msg, line: Optional[int] = None):
        self.line = line
        super().__init__(msg if line is None else f"line {line}: {msg}")


@dataclass(frozen=True)
class BenchmarkSpec:
    k_id: int = 6
    k_ood: int = 4
    d: int = 16
    n_labeled_per_class: int = 20
    m_unlabeled: int = 2000
    n_test_per_class: int = 200
    mismatch_ratio: float = 0.5
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    ood_imbalance_ratio: float = 1.0
    seed: int = 42

    def __post_init__(self):
        for key in ("k_id", "d", "n_labeled_per_class", "n_test_per_class"):
            if getattr(self, key) < 1:
                raise SpecError(key, f"must be >= 1, got {getattr(self, key)}")
        if self.k_id < 2:
            raise SpecError("k_id", f"must be >= 2, got {self.k_id}")
        if self.k_ood < 0:
            raise SpecError("k_ood", f"must be >= 0, got {self.k_ood}")
        if self.m_unlabeled < 0:
            raise SpecError("m_unlabeled", f"must be >= 0, got {self.m_unlabeled}")
        if not 0.0 <= self.mismatch_ratio <= 1.0:
            raise SpecError("mismatch_ratio", f"must be in [0, 1], got {self.mismatch_ratio}")
        if self.mismatch_ratio > 0 and self.k_ood == 0 and self.m_unlabeled > 0:
            raise SpecError("k_ood", "must be >= 1 when mismatch_ratio > 0")
        if not self.class_separation > 0:
            raise SpecError("class_separation", f"must be > 0, got {self.class_separation}")
        if not self.noise_sigma > 0:
            raise SpecError("noise_sigma", f"must be > 0, got {self.noise_sigma}")
        if not self.ood_imbalance_ratio >= 1.0:
            raise SpecError("ood_imbalance_ratio", f"must be >= 1, got {self.ood_imbalance_ratio}")

    @classmethod
    def from_cfg(cls, **overrides):
        values = dict(
            k_id=cfg.K_ID,
            k_ood=cfg.K_OOD,
            d=cfg.FEATURE_DIM,
            n_labeled_per_class=cfg.N_LABELED_PER_CLASS,
            m_unlabeled=cfg.M_UNLABELED,
            n_test_per_class=cfg.N_TEST_PER_CLASS,
            mismatch_ratio=cfg.MISMATCH_RATIO,
            class_separation=cfg.CLASS_SEPARATION,
            noise_sigma=cfg.NOISE_SIGMA,
            ood_imbalance_ratio=cfg.OOD_IMBALANCE_RATIO,
            seed=cfg.RANDOM_SEED,
        )
        values.update(overrides)

        return cls(**values)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @property
    def n_ood_unlabeled(self):
        # Round half up
        return int(math.floor(self.mismatch_ratio * self.m_unlabeled + 0.5))


@dataclass(frozen=True)
class MismatchedDataset:
    """Labeled ID data, an unlabeled pool with hidden truth, and test splits.

    `ground_truth` and `ood_mask` of the pool are for evaluation and the
    strategy oracles only; unknown ground truth is -1. ID classes are
    0..k_id-1, OOD classes k_id..k_id+k_ood-1.
    """

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    ground_truth: np.ndarray
    ood_mask: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    k_id: int
    k_ood: int = 0
    full_test_x: Optional[np.ndarray] = None
    full_test_y: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.asarray(self.labeled_x).shape[1]
        for name, dtype in (
            ("labeled_x", np.float64),
            ("labeled_y", np.int64),
            ("unlabeled_x", np.float64),
            ("ground_truth", np.int64),
            ("ood_mask", bool),
            ("test_x", np.float64),
            ("test_y", np.int64),
        ):
            a = np.array(getattr(self, name), dtype=dtype, copy=True)
            if a.ndim == 2 and a.shape[0] == 0:
                a = a.reshape(0, d)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

        if self.full_test_x is None:
            object.__setattr__(self, "full_test_x", self.test_x)
            object.__setattr__(self, "full_test_y", self.test_y)
        self.validate()

    def validate(self):
        if self.labeled_x.shape[0] == 0:
            raise ValueError("Dataset has no labeled samples")
        if self.labeled_y.shape != (self.labeled_x.shape[0],):
            raise ValueError("labeled_y must have one label per labeled sample")
        if np.any((self.labeled_y < 0) | (self.labeled_y >= self.k_id)):
            raise ValueError(f"Labeled labels must be ID classes 0..{self.k_id - 1}")
        m = self.unlabeled_x.shape[0]
        if self.ground_truth.shape != (m,) or self.ood_mask.shape != (m,):
            raise ValueError("ground_truth and ood_mask need one entry per unlabeled sample")
        known = self.ground_truth >= 0
        if np.any(self.ood_mask[known] != (self.ground_truth[known] >= self.k_id)):
            raise ValueError("ood_mask disagrees with the ground truth")
        if np.any((self.test_y < 0) | (self.test_y >= self.k_id)):
            raise ValueError("test_y must hold ID classes only")
        for name in ("unlabeled_x", "test_x"):
            x = getattr(self, name)
            if x.shape[0] and x.shape[1] != self.dim:
                raise ValueError(f"{name} has {x.shape[1]} features, labeled data has {self.dim}")

    @property
    def dim(self):
        return self.labeled_x.shape[1]

    @property
    def n_labeled(self):
        return self.labeled_x.shape[0]

    @property
    def m_unlabeled(self):
        return self.unlabeled_x.shape[0]

    @property
    def unlabeled(self):
        return SampleBatch(self.unlabeled_x)

    def ood_classes(self):
        """Distinct OOD classes present in the pool, ascending."""
        return np.unique(self.ground_truth[self.ood_mask & (self.ground_truth >= 0)])

    def ood_fraction(self):
        return float(self.ood_mask.mean()) if self.m_unlabeled else 0.0


def _split_evenly(total, parts):
    base, rest = divmod(total, parts)

    return [base + (1 if i < rest else 0) for i in range(parts)]


def ood_class_counts(n_ood: int, k_ood: int, imbalance_ratio: float):
    """Sizes of the OOD classes in the pool.

    Sizes decay geometrically from the first to the last OOD class by a
    factor `imbalance_ratio` and are rounded by largest remainder, so they sum
    to n_ood. A ratio of 1 splits evenly.
    """
    if k_ood == 0 or n_ood == 0:
        return [0] * k_ood
    if imbalance_ratio == 1.0 or k_ood == 1:
        return _split_evenly(n_ood, k_ood)

    w = imbalance_ratio ** (-np.arange(k_ood) / (k_ood - 1))
    exact = n_ood * w / w.sum()
    counts = np.floor(exact).astype(int)
    # Largest remainder, ties to the lower class index
    order = np.lexsort((np.arange(k_ood), -(exact - counts)))
    counts[order[: n_ood - counts.sum()]] += 1

    return counts.tolist()


def class_means(spec: BenchmarkSpec):
    """Cluster means of all K_ID + K_OOD classes, one row per class."""
    means = []
    for c in range(spec.k_id + spec.k_ood):
        direction = utils.derived_rng(spec.seed, 0, c).standard_normal(spec.d)
        means.append(spec.class_separation * direction / np.linalg.norm(direction))

    return np.array(means)


def _sample_class(spec: BenchmarkSpec, c: int, center, n: int):
    if n == 0:
        return np.zeros((0, spec.d))
    state = int(utils.derived_rng(spec.seed, 1, c).integers(2**31 - 1))
    x, _ = make_blobs(n_samples=n, n_features=spec.d, centers=center[None, :], cluster_std=spec.noise_sigma, shuffle=False, random_state=state)

    return x


def generate(spec: BenchmarkSpec):
    """Generates a class-mismatched benchmark.

    The pool holds round(mismatch_ratio * m_unlabeled) OOD samples (half
    up); the ID classes share the remainder evenly. Labeled and test splits
    hold exactly n_labeled_per_class and n_test_per_class samples per ID
    class; the full test split adds n_test_per_class samples per OOD class.

    Args:
        spec: The benchmark spec.

    Returns:
        A `MismatchedDataset`, a pure function of the spec.
    """
    means = class_means(spec)
    n_ood = spec.n_ood_unlabeled
    id_pool = _split_evenly(spec.m_unlabeled - n_ood, spec.k_id)
    ood_pool = ood_class_counts(n_ood, spec.k_ood, spec.ood_imbalance_ratio)

    labeled_x, labeled_y, pool_x, pool_y, test_x, test_y, ood_test_x, ood_test_y = ([] for _ in range(8))

    for c in range(spec.k_id):
        n_l, n_u, n_t = spec.n_labeled_per_class, id_pool[c], spec.n_test_per_class
        x = _sample_class(spec, c, means[c], n_l + n_u + n_t)
        labeled_x.append(x[:n_l])
        pool_x.append(x[n_l : n_l + n_u])
        test_x.append(x[n_l + n_u :])
        labeled_y.append(np.full(n_l, c))
        pool_y.append(np.full(n_u, c))
        test_y.append(np.full(n_t, c))

    for o in range(spec.k_ood):
        c = spec.k_id + o
        x = _sample_class(spec, c, means[c], ood_pool[o] + spec.n_test_per_class)
        pool_x.append(x[: ood_pool[o]])
        ood_test_x.append(x[ood_pool[o] :])
        pool_y.append(np.full(ood_pool[o], c))
        ood_test_y.append(np.full(spec.n_test_per_class, c))

    perm = utils.derived_rng(spec.seed, 2).permutation(spec.m_unlabeled)
    unlabeled_x = np.concatenate(pool_x)[perm]
    ground_truth = np.concatenate(pool_y).astype(np.int64)[perm]
    test_x, test_y = np.concatenate(test_x), np.concatenate(test_y)

    return MismatchedDataset(
        labeled_x=np.concatenate(labeled_x),
        labeled_y=np.concatenate(labeled_y),
        unlabeled_x=unlabeled_x,
        ground_truth=ground_truth,
        ood_mask=ground_truth >= spec.k_id,
        test_x=test_x,
        test_y=test_y,
        k_id=spec.k_id,
        k_ood=spec.k_ood,
        full_test_x=np.concatenate([test_x] + ood_test_x),
        full_test_y=np.concatenate([test_y] + ood_test_y).astype(np.int64),
    )


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a feature CSV.

    Attributes:
        label_column: Integer class; may be empty for unlabeled rows.
        split_column: One of labeled, unlabeled, test.
        ood_column: Optional 0/1 (or true/false) OOD flag of unlabeled rows.
        feature_columns: Explicit feature columns. Defaults to every column
            whose name starts with feature_prefix.
        k_id: Number of ID classes. Defaults to max labeled label + 1.
    """

    label_column: str = "label"
    split_column: str = "split"
    ood_column: Optional[str] = "ood"
    feature_columns: Optional[Sequence[str]] = None
    feature_prefix: str = "x"
    k_id: Optional[int] = None


_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no", ""}


def ingest_csv(path: str, schema: CsvSchema = None):
    """Reads a feature dataset from a CSV file.

    The header is line 1, data row i is line i + 2. Test rows with an ID
    label form the test split; every test row goes into the full test split.

    Raises:
        CsvFormatError: On missing columns, non-numeric features or labels,
            unknown split tags or labeled rows without label.
    """
    schema = schema or CsvSchema()
    df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    df.columns = [c.strip() for c in df.columns]

    features = list(schema.feature_columns or [c for c in df.columns if c.startswith(schema.feature_prefix)])
    required = features + [schema.label_column, schema.split_column]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise CsvFormatError(f"missing columns {missing}", line=1)
    if not features:
        raise CsvFormatError(f"no feature columns (prefix '{schema.feature_prefix}')", line=1)
    has_ood = schema.ood_column is not None and schema.ood_column in df.columns

    n = len(df)
    x = np.zeros((n, len(features)))
    y = np.full(n, -1, dtype=np.int64)
    split = []
    ood = np.zeros(n, dtype=bool)

    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2
        record = dict(zip(df.columns, row))

        for j, col in enumerate(features):
            try:
                x[i, j] = float(record[col])
            except ValueError:
                raise CsvFormatError(f"non-numeric value '{record[col]}' in feature column '{col}'", line=line)
        if not np.all(np.isfinite(x[i])):
            raise CsvFormatError("non-finite feature value", line=line)

        tag = record[schema.split_column].strip().lower()
        if tag not in SPLIT_TAGS:
            raise CsvFormatError(f"unknown split tag '{tag}', use one of {SPLIT_TAGS}", line=line)
        split.append(tag)

        label = record[schema.label_column].strip()
        if label:
            try:
                y[i] = int(label)
            except ValueError:
                raise CsvFormatError(f"non-integer label '{label}'", line=line)
            if y[i] < 0:
                raise CsvFormatError(f"negative label {y[i]}", line=line)
        elif tag != "unlabeled":
            raise CsvFormatError(f"{tag} row without label", line=line)

        if has_ood:
            flag = record[schema.ood_column].strip().lower()
            if flag not in _TRUE | _FALSE:
                raise CsvFormatError(f"invalid OOD flag '{flag}'", line=line)
            ood[i] = flag in _TRUE

    split = np.array(split, dtype=object)
    is_l, is_u, is_t = (split == "labeled"), (split == "unlabeled"), (split == "test")
    if not np.any(is_l):
        raise CsvFormatError("no labeled rows")

    k_id = schema.k_id or int(y[is_l].max()) + 1
    bad = np.flatnonzero(is_l & (y >= k_id))
    if bad.size:
        raise CsvFormatError(f"labeled row with label {y[bad[0]]} outside the {k_id} ID classes", line=int(bad[0]) + 2)

    gt = y[is_u]
    ood_u = ood[is_u] if has_ood else (gt >= k_id)
    if has_ood:
        clash = np.flatnonzero((gt >= 0) & (ood_u != (gt >= k_id)))
        if clash.size:
            line = int(np.flatnonzero(is_u)[clash[0]]) + 2
            raise CsvFormatError("OOD flag disagrees with the label", line=line)

    id_test = is_t & (y < k_id)
    ood_labels = np.unique(np.concatenate([gt[gt >= k_id], y[is_t & (y >= k_id)]]))

    return MismatchedDataset(
        labeled_x=x[is_l],
        labeled_y=y[is_l],
        unlabeled_x=x[is_u].reshape(-1, len(features)),
        ground_truth=gt,
        ood_mask=ood_u,
        test_x=x[id_test].reshape(-1, len(features)),
        test_y=y[id_test],
        k_id=k_id,
        k_ood=int(ood_labels.size),
        full_test_x=x[is_t].reshape(-1, len(features)),
        full_test_y=y[is_t],
    )
