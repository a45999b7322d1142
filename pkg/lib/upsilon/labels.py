"""Class-space, sample and prediction containers shared by all modules.

Every container is immutable after construction: array fields are copied
and flagged read-only.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import config as cfg


class DimensionMismatchError(ValueError):
    """A matrix does not have the shape the label space requires."""


class PseudoLabelError(ValueError):
    """A pseudo-label set violates its invariants."""


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)

    return a


@dataclass(frozen=True)
class LabelSpace:
    """Partition of class indices into ID classes and extra classes.

    ID classes are 0..k_id-1, extra classes are k_id..k_id+k_extra-1.
    """

    k_id: int
    k_extra: int = 0

    def __post_init__(self):
        if int(self.k_id) != self.k_id or self.k_id < 2:
            raise ValueError(f"k_id must be an integer >= 2, got {self.k_id}")
        if int(self.k_extra) != self.k_extra or self.k_extra < 0:
            raise ValueError(f"k_extra must be an integer >= 0, got {self.k_extra}")

    @property
    def total(self):
        return self.k_id + self.k_extra

    @property
    def id_classes(self):
        return range(self.k_id)

    @property
    def extra_classes(self):
        return range(self.k_id, self.total)

    def is_extra(self, class_index: int):
        return self.k_id <= class_index < self.total


@dataclass(frozen=True)
class ValidationReport:
    """Result of `validate_prediction_matrix`.

    `kind` is one of None, 'shape', 'non_finite', 'negative', 'row_sum'.
    """

    ok: bool
    kind: Optional[str] = None
    row: Optional[int] = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def validate_prediction_matrix(p, tol: Optional[float] = None):
    """Checks row-stochasticity and nonnegativity of a matrix.

    Rows are scanned in order; the report names the first violating row.

    Args:
        p: A `PredictionMatrix` or a 2-D array.
        tol: Allowed deviation of a row sum from 1. Defaults to cfg.ROW_SUM_TOL.

    Returns:
        A `ValidationReport`. Never raises.
    """
    tol = cfg.ROW_SUM_TOL if tol is None else tol
    a = p.probs if isinstance(p, PredictionMatrix) else np.asarray(p, dtype=float)

    if a.ndim != 2:
        return ValidationReport(False, "shape", None, f"expected a 2-D matrix, got {a.ndim} dimensions")

    for i, row in enumerate(a):
        if not np.all(np.isfinite(row)):
            return ValidationReport(False, "non_finite", i, f"row {i} contains non-finite entries")
        if np.any(row < 0):
            j = int(np.argmax(row < 0))
            return ValidationReport(False, "negative", i, f"row {i} has negative entry {row[j]} in column {j}")
        s = float(row.sum())
        if abs(s - 1.0) > tol:
            return ValidationReport(False, "row_sum", i, f"row {i} sums to {s}")

    return ValidationReport(True)


@dataclass(frozen=True)
class PredictionMatrix:
    """Row-stochastic matrix of model posteriors (samples x classes)."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs, dtype=np.float64))
        report = validate_prediction_matrix(self.probs)
        if not report:
            raise ValueError(f"Invalid prediction matrix: {report.detail}")

    @classmethod
    def from_scores(cls, scores):
        """Builds a matrix from nonnegative scores by renormalizing each row."""
        s = np.asarray(scores, dtype=np.float64)

        return cls(s / s.sum(axis=1, keepdims=True))

    @property
    def rows(self):
        return self.probs.shape[0]

    @property
    def cols(self):
        return self.probs.shape[1]

    def take(self, indices):
        """Sub-matrix of the given rows."""
        return PredictionMatrix(self.probs[np.asarray(indices, dtype=int)])

    def check_space(self, ls: LabelSpace):
        if self.cols != ls.total:
            raise DimensionMismatchError(
                f"Prediction matrix has {self.cols} columns but the label space has {ls.total} classes "
                f"({ls.k_id} ID + {ls.k_extra} extra)"
            )


@dataclass(frozen=True)
class SampleBatch:
    """Feature matrix with stable sample indices."""

    features: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _frozen(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionMismatchError(f"features must be a 2-D matrix, got shape {x.shape}")
        ids = np.arange(x.shape[0]) if self.ids is None else self.ids
        ids = _frozen(ids, dtype=np.int64)
        if ids.shape != (x.shape[0],):
            raise DimensionMismatchError(f"{ids.shape[0]} ids for {x.shape[0]} samples")
        if np.unique(ids).size != ids.size:
            raise ValueError("Sample ids must be unique")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class PseudoLabelSet:
    """Sparse (sample_index, class_index) assignments of a labeling round.

    Entries are kept sorted by sample index; each sample appears once.
    """

    sample_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    class_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        s = np.asarray(self.sample_indices, dtype=np.int64).reshape(-1)
        c = np.asarray(self.class_indices, dtype=np.int64).reshape(-1)
        if s.shape != c.shape:
            raise PseudoLabelError(f"{s.size} sample indices for {c.size} class indices")
        if np.unique(s).size != s.size:
            raise PseudoLabelError("A sample appears more than once in the pseudo-label set")
        order = np.argsort(s, kind="stable")
        object.__setattr__(self, "sample_indices", _frozen(s[order]))
        object.__setattr__(self, "class_indices", _frozen(c[order]))

    @classmethod
    def empty(cls):
        return cls()

    @classmethod
    def from_entries(cls, entries):
        entries = list(entries)
        if not entries:
            return cls()
        s, c = zip(*entries)

        return cls(np.array(s), np.array(c))

    def __len__(self):
        return int(self.sample_indices.size)

    @property
    def entries(self):
        return list(zip(self.sample_indices.tolist(), self.class_indices.tolist()))

    def as_dict(self):
        return dict(self.entries)

    def validate(self, ls: LabelSpace):
        """Raises `PseudoLabelError` if a class index is outside the label space."""
        bad = (self.class_indices < 0) | (self.class_indices >= ls.total)
        if np.any(bad):
            raise PseudoLabelError(
                f"class index {int(self.class_indices[bad][0])} outside label space of {ls.total} classes"
            )

        return self

    def union(self, other: "PseudoLabelSet"):
        """Union of two disjoint sets."""
        return PseudoLabelSet(
            np.concatenate([self.sample_indices, other.sample_indices]),
            np.concatenate([self.class_indices, other.class_indices]),
        )

    def select_classes(self, classes):
        """Entries whose class is in `classes`."""
        keep = np.isin(self.class_indices, np.asarray(list(classes), dtype=np.int64))

        return PseudoLabelSet(self.sample_indices[keep], self.class_indices[keep])

    def restrict(self, sample_mask):
        """Entries whose sample is flagged in the boolean `sample_mask`."""
        mask = np.asarray(sample_mask, dtype=bool)
        keep = mask[self.sample_indices] if len(self) else np.zeros(0, dtype=bool)

        return PseudoLabelSet(self.sample_indices[keep], self.class_indices[keep])


def predict_id_label(p: PredictionMatrix, ls: LabelSpace):
    """Predicts the label of each row restricted to the ID classes.

    Extra-class columns never win. Ties go to the lowest class index.

    Args:
        p: Prediction matrix with ls.total columns.
        ls: The label space.

    Returns:
        Integer vector of ID class indices, one per row.
    """
    p.check_space(ls)

    return np.argmax(p.probs[:, : ls.k_id], axis=1).astype(np.int64)
