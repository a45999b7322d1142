"""Vanilla thresholded pseudo-labeling and Re-balanced Pseudo-Labeling (RPL)."""

from dataclasses import dataclass

import numpy as np

from confidence import id_confidence
from labels import LabelSpace, PredictionMatrix, PseudoLabelSet, predict_id_label


@dataclass(frozen=True)
class RplThresholds:
    """Per-class quota and cutoffs of a RPL round.

    Attributes:
        n: The quota N, the smallest per-class count of f(y|x) > tau.
        tau_y: N-th largest value of each ID column; NaN when n == 0.
        counts: Per-class counts of f(y|x) > tau.
    """

    n: int
    tau_y: np.ndarray
    counts: np.ndarray

    @property
    def defined(self):
        return self.n > 0


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")


def vanilla_pl(p: PredictionMatrix, ls: LabelSpace, tau: float):
    """Pseudo-labels every row whose ID confidence exceeds tau.

    Args:
        p: Prediction matrix of the unlabeled pool.
        ls: The label space.
        tau: Confidence threshold in (0, 1).

    Returns:
        A `PseudoLabelSet` with ID-class labels; rejected rows are absent.
    """
    _check_tau(tau)
    conf = id_confidence(p, ls)
    rows = np.flatnonzero(conf.above(tau))

    return PseudoLabelSet(rows, predict_id_label(p, ls)[rows])


def compute_rpl_thresholds(p: PredictionMatrix, ls: LabelSpace, tau: float):
    """Computes the RPL quota N and the per-class cutoffs tau_y.

    N = min over ID classes y of |{x : f(y|x) > tau}|, and tau_y is the N-th
    largest value of column y. When N == 0 the cutoffs are undefined (NaN).
    """
    p.check_space(ls)
    block = p.probs[:, : ls.k_id]
    counts = (block > tau).sum(axis=0).astype(np.int64)
    n = int(counts.min()) if counts.size else 0
    tau_y = np.full(ls.k_id, np.nan)

    if n > 0:
        # n-th largest of each column
        tau_y = -np.partition(-block, n - 1, axis=0)[n - 1]

    return RplThresholds(n, tau_y, counts)


def rebalanced_pl(p: PredictionMatrix, ls: LabelSpace, tau: float, thresholds: RplThresholds = None):
    """Re-balanced Pseudo-Labeling.

    For every ID class the quota N most confident rows are selected, so the
    pseudo-label histogram is exactly uniform. A row is only a candidate for
    its ID-argmax class, which keeps classes disjoint for any tau. Ties are
    broken by (probability desc, row index asc). When tau < 0.5 leaves a class
    with fewer than N candidates, the quota shrinks to that class' candidate
    count so the balance still holds.

    Args:
        p: Prediction matrix of the unlabeled pool.
        ls: The label space.
        tau: Counting threshold of the quota.
        thresholds: Precomputed thresholds for the same p and tau.

    Returns:
        A `PseudoLabelSet` with exactly `quota` entries per ID class.
    """
    thresholds = thresholds or compute_rpl_thresholds(p, ls, tau)
    if thresholds.n == 0:
        return PseudoLabelSet.empty()

    argmax = predict_id_label(p, ls)
    candidates = [np.flatnonzero(argmax == y) for y in ls.id_classes]
    quota = min(thresholds.n, min(c.size for c in candidates))
    if quota == 0:
        return PseudoLabelSet.empty()

    rows, labels = [], []
    for y, cand in enumerate(candidates):
        order = np.lexsort((cand, -p.probs[cand, y]))
        chosen = cand[order[:quota]]
        rows.append(chosen)
        labels.append(np.full(quota, y, dtype=np.int64))

    return PseudoLabelSet(np.concatenate(rows), np.concatenate(labels))
