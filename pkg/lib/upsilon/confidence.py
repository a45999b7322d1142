"""Per-sample ID confidence under three interchangeable measures."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

import config as cfg
from labels import LabelSpace, PredictionMatrix


class ConfidenceMeasure(str, Enum):
    MAX_PROB = "maxprob"
    NEG_ENTROPY = "entropy"
    SCORE_DIFF = "scorediff"


@dataclass(frozen=True)
class ConfidenceVector:
    values: np.ndarray
    measure: ConfidenceMeasure

    def __len__(self):
        return int(self.values.size)

    def below(self, threshold: float):
        """Boolean mask of samples with confidence strictly below `threshold`."""
        return self.values < threshold

    def above(self, threshold: float):
        return self.values > threshold


def _vector(values, measure):
    values = np.asarray(values, dtype=np.float64)
    values.setflags(write=False)

    return ConfidenceVector(values, measure)


def _id_block(p: PredictionMatrix, ls: LabelSpace):
    """ID columns renormalized to a distribution."""
    p.check_space(ls)
    block = p.probs[:, : ls.k_id]
    mass = block.sum(axis=1, keepdims=True)

    return np.divide(block, mass, out=np.full_like(block, 1.0 / ls.k_id), where=mass > 0)


def id_confidence(p: PredictionMatrix, ls: LabelSpace):
    """Maximum probability over the ID columns (the In-Distribution confidence).

    Args:
        p: Prediction matrix with ls.total columns.
        ls: The label space.

    Returns:
        A MaxProb `ConfidenceVector`.
    """
    p.check_space(ls)

    return _vector(p.probs[:, : ls.k_id].max(axis=1, initial=0.0), ConfidenceMeasure.MAX_PROB)


def entropy_confidence(p: PredictionMatrix, ls: Optional[LabelSpace] = None, id_columns_only: bool = False):
    """Negative entropy of each row, natural log. Higher means more confident.

    Entries are clamped below by cfg.ENTROPY_EPS before the log.

    Args:
        p: Prediction matrix.
        ls: Label space, only needed with id_columns_only.
        id_columns_only: Use the renormalized ID columns instead of all columns.
    """
    probs = _id_block(p, ls) if id_columns_only else p.probs
    logs = np.log(np.maximum(probs, cfg.ENTROPY_EPS))

    return _vector((probs * logs).sum(axis=1), ConfidenceMeasure.NEG_ENTROPY)


def score_diff_confidence(p: PredictionMatrix, ls: Optional[LabelSpace] = None, id_columns_only: bool = False):
    """Largest minus second-largest probability of each row."""
    probs = _id_block(p, ls) if id_columns_only else p.probs

    if probs.shape[1] < 2:
        raise ValueError("Score difference needs at least 2 columns")

    top2 = -np.partition(-probs, 1, axis=1)[:, :2]

    return _vector(top2[:, 0] - top2[:, 1], ConfidenceMeasure.SCORE_DIFF)


def compute_confidence(p: PredictionMatrix, ls: LabelSpace, measure=None, id_columns_only=None):
    """Dispatches to the configured confidence measure.

    Args:
        p: Prediction matrix.
        ls: The label space.
        measure: A `ConfidenceMeasure` or its string value. Defaults to cfg.CONFIDENCE_MEASURE.
        id_columns_only: Defaults to cfg.CONFIDENCE_ID_COLUMNS_ONLY. Ignored for MaxProb.
    """
    measure = ConfidenceMeasure(cfg.CONFIDENCE_MEASURE if measure is None else measure)
    id_only = cfg.CONFIDENCE_ID_COLUMNS_ONLY if id_columns_only is None else id_columns_only

    if measure is ConfidenceMeasure.MAX_PROB:
        return id_confidence(p, ls)
    if measure is ConfidenceMeasure.NEG_ENTROPY:
        p.check_space(ls)
        return entropy_confidence(p, ls, id_only)

    p.check_space(ls)

    return score_diff_confidence(p, ls, id_only)
