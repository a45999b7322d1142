"""Imbalance and contamination metrics of pseudo-labels.
"""

import math
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import rel_entr
from sklearn.metrics import confusion_matrix

import config as cfg
import model
import utils
from labels import LabelSpace, PseudoLabelSet, predict_id_label
from confidence import id_confidence


class EmptyHistogramError(ValueError):
    """A histogram with total count 0 has no distribution."""


@dataclass(frozen=True)
class LabelHistogram:
    """Pseudo-label counts per class."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True).reshape(-1)
        if np.any(counts < 0):
            raise ValueError("Histogram counts must be >= 0")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels, n_classes: int):
        """Counts `labels` over classes 0..n_classes-1."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"Labels outside 0..{n_classes - 1}")

        return cls(np.bincount(labels, minlength=n_classes))

    @property
    def total(self):
        return int(self.counts.sum())

    def distribution(self):
        if self.total == 0:
            raise EmptyHistogramError("Histogram is empty")

        return self.counts / self.total


def kl_to_uniform(h: LabelHistogram):
    """KL divergence of the normalized histogram to the uniform distribution.

    Natural log, with 0 * log 0 = 0.

    Raises:
        EmptyHistogramError: If the histogram has no counts.
    """
    q = h.distribution()

    return float(rel_entr(q, np.full(q.size, 1.0 / q.size)).sum())


@dataclass(frozen=True)
class ImbalanceRatio:
    """Majority/minority ratio; `unbounded` is set when a class is empty."""

    value: float
    unbounded: bool = False

    def __float__(self):
        return self.value


def majority_minority_ratio(h: LabelHistogram):
    """max_i q_i / min_i q_i of a histogram.

    Returns:
        An `ImbalanceRatio`. When the smallest count is 0 the value is +inf
        and `unbounded` is set.
    """
    if h.total == 0:
        raise EmptyHistogramError("Histogram is empty")

    lo, hi = int(h.counts.min()), int(h.counts.max())
    if lo == 0:
        return ImbalanceRatio(math.inf, True)

    return ImbalanceRatio(hi / lo)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rectangular confusion matrix: true classes x predicted ID classes."""

    counts: np.ndarray
    k_id: int

    @property
    def n_true(self):
        return self.counts.shape[0]

    def to_frame(self):
        return pd.DataFrame(
            self.counts,
            index=pd.Index(range(self.n_true), name="true"),
            columns=[f"pred_{c}" for c in range(self.k_id)],
        )


def confusion(true_labels, predicted_id_labels, ls: LabelSpace, n_true_classes: Optional[int] = None):
    """Tallies (true class, predicted ID class) pairs.

    Args:
        true_labels: True classes, OOD classes included (>= k_id).
        predicted_id_labels: Predicted ID classes, e.g. from `predict_id_label`.
        ls: The label space of the model.
        n_true_classes: Number of true classes (K_ID + K_OOD). Defaults to
            the larger of k_id and max(true_labels) + 1.

    Returns:
        A `ConfusionMatrix` with n_true_classes rows and k_id columns.
    """
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted_id_labels, dtype=np.int64).reshape(-1)

    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels for {p.size} predictions")

    n_true = n_true_classes or max(ls.k_id, int(t.max()) + 1 if t.size else 0)
    if t.size and (t.min() < 0 or t.max() >= n_true):
        raise ValueError(f"True label outside 0..{n_true - 1}")
    if p.size and (p.min() < 0 or p.max() >= ls.k_id):
        raise ValueError(f"Predicted label outside the ID classes 0..{ls.k_id - 1}")

    if t.size == 0:
        return ConfusionMatrix(np.zeros((n_true, ls.k_id), dtype=np.int64), ls.k_id)

    counts = confusion_matrix(t, p, labels=np.arange(n_true))[:, : ls.k_id]

    return ConfusionMatrix(counts.astype(np.int64), ls.k_id)


def ood_as_id_proportion(pl_set: PseudoLabelSet, ood_mask, ls: LabelSpace):
    """Share of the pool's OOD samples that carry an ID-class pseudo-label.

    Returns 0 when the pool has no OOD samples.
    """
    mask = np.asarray(ood_mask, dtype=bool).reshape(-1)
    n_ood = int(mask.sum())

    if n_ood == 0 or len(pl_set) == 0:
        return 0.0

    hit = mask[pl_set.sample_indices] & (pl_set.class_indices < ls.k_id)

    return int(hit.sum()) / n_ood


def _metrics(labels, k_id):
    if labels.size == 0:
        return None, None
    h = LabelHistogram.from_labels(labels, k_id)

    return kl_to_uniform(h), float(majority_minority_ratio(h))


def imbalance_trial(params, dataset, trial: int, tau: Optional[float] = None):
    """Imbalance of ID-class pseudo-labels on the ID and OOD parts of a pool.

    Every pool sample gets the ID-restricted prediction of the model (those
    with ID confidence above tau when tau is given); the histograms of the
    ID part and the OOD part are measured separately.

    Returns:
        A dict with trial, kl_id, kl_ood, r_id, r_ood. OOD entries are None
        when the pool holds no OOD sample.
    """
    ls = LabelSpace(dataset.k_id, params.n_classes - dataset.k_id)
    p = model.forward(params, dataset.unlabeled_x)
    labels = predict_id_label(p, ls)
    keep = np.ones(labels.size, dtype=bool) if tau is None else id_confidence(p, ls).above(tau)

    kl_id, r_id = _metrics(labels[keep & ~dataset.ood_mask], ls.k_id)
    kl_ood, r_ood = _metrics(labels[keep & dataset.ood_mask], ls.k_id)

    return {"trial": int(trial), "kl_id": kl_id, "kl_ood": kl_ood, "r_id": r_id, "r_ood": r_ood}


def _runTrial(item):
    fit, dataset_generator, seed, trial, tau, config = item
    cfg.setConfig(config)
    dataset = dataset_generator(seed + trial)
    params = fit if isinstance(fit, model.ClassifierParams) else fit(dataset, seed + trial)

    return imbalance_trial(params, dataset, trial, tau)


def imbalance_study(fit, dataset_generator, trials: int, seed: int, tau=None, workers: int = 1, verbose=False):
    """Runs independent ID/OOD imbalance trials.

    Trial t draws a dataset with seed + t, obtains a labeled-only model and
    measures `imbalance_trial` on it.

    Args:
        fit: Fixed `ClassifierParams` (e.g. a cached snapshot), a path to a
            saved classifier, or a picklable callable (dataset, seed) ->
            `ClassifierParams` training the labeled-only model.
        dataset_generator: Picklable callable seed -> `MismatchedDataset`.
        trials: Number of trials, >= 1.
        seed: Base seed.
        tau: Optional ID-confidence filter of the pseudo-labels.
        workers: Size of the worker pool.
        verbose: Print progress.

    Returns:
        A DataFrame with columns trial, kl_id, kl_ood, r_id, r_ood, one row
        per trial in trial order.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if isinstance(fit, str):
        fit = model.loadClassifier(fit)

    items = [(fit, dataset_generator, int(seed), t, tau, cfg.getConfig()) for t in range(trials)]

    if verbose:
        print(f"Running {trials} imbalance trials...", flush=True)

    if workers <= 1 or trials == 1:
        rows = [_runTrial(item) for item in items]
    else:
        with Pool(workers, initializer=utils.limit_blas_threads, initargs=(1,)) as p:
            rows = p.map(_runTrial, items)

    if verbose:
        print("...Done.", flush=True)

    return pd.DataFrame(sorted(rows, key=lambda r: r["trial"]), columns=["trial", "kl_id", "kl_ood", "r_id", "r_ood"])
