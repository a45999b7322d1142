"""OOD labeling strategies used by the analysis harness.

These oracles read the ground truth of the unlabeled pool, so they only
exist to measure how the labeling of OOD data affects the ID classifier.
"""

import itertools
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from labels import LabelSpace, PseudoLabelSet


class StrategyError(ValueError):
    """A strategy cannot label the given pool in the given label space."""


class StrategyKind(str, Enum):
    BASELINE = "baseline"
    REASSIGNED = "reassigned"
    OPENSET = "openset"
    ORACLE = "oracle"


@dataclass(frozen=True)
class Strategy:
    """A strategy kind plus, for ReAssigned, its OOD -> ID class map.

    `reassignment[o]` is the ID class that receives OOD class k_id + o.
    """

    kind: StrategyKind
    reassignment: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.reassignment is not None:
            object.__setattr__(self, "reassignment", tuple(int(c) for c in self.reassignment))


def _check_reassignment(mapping, ls: LabelSpace):
    if mapping is None:
        raise StrategyError("ReAssigned needs an OOD -> ID class map")
    if len(set(mapping)) != len(mapping):
        raise StrategyError(f"ReAssigned map {mapping} is not injective")
    if any(not 0 <= c < ls.k_id for c in mapping):
        raise StrategyError(f"ReAssigned map {mapping} targets a class outside the {ls.k_id} ID classes")


def label_ood(ground_truth, ood_mask, strategy: Strategy, ls: LabelSpace):
    """Labels the OOD samples of a pool with one of the four strategies.

    Baseline omits all OOD data. ReAssigned maps each OOD class onto an ID
    class through an injective map. OpenSet labels all OOD data with the
    single extra class k_id. Oracle gives every OOD class its own extra class,
    ranking the OOD class ids ascending. ID samples are never labeled.

    Args:
        ground_truth: True class of every pool sample; OOD classes are >= k_id.
        ood_mask: Boolean vector flagging the OOD samples.
        strategy: A `Strategy` (or a bare `StrategyKind` for the map-free kinds).
        ls: The label space of the trained model.

    Returns:
        A `PseudoLabelSet` over the OOD samples (empty for Baseline).
    """
    if not isinstance(strategy, Strategy):
        strategy = Strategy(strategy)

    gt = np.asarray(ground_truth, dtype=np.int64).reshape(-1)
    mask = np.asarray(ood_mask, dtype=bool).reshape(-1)
    if gt.shape != mask.shape:
        raise StrategyError(f"{gt.size} ground-truth labels for {mask.size} OOD flags")

    rows = np.flatnonzero(mask)
    classes = gt[rows]

    if strategy.kind is StrategyKind.BASELINE or rows.size == 0:
        return PseudoLabelSet.empty()

    if np.any(classes < ls.k_id):
        raise StrategyError("A sample flagged as OOD has an ID ground-truth class")

    if strategy.kind is StrategyKind.REASSIGNED:
        mapping = strategy.reassignment
        _check_reassignment(mapping, ls)
        offsets = classes - ls.k_id
        if offsets.max() >= len(mapping):
            raise StrategyError(f"OOD class {int(classes.max())} has no entry in the ReAssigned map")
        return PseudoLabelSet(rows, np.asarray(mapping, dtype=np.int64)[offsets])

    if strategy.kind is StrategyKind.OPENSET:
        if ls.k_extra < 1:
            raise StrategyError("OpenSet labeling needs k_extra >= 1")
        return PseudoLabelSet(rows, np.full(rows.size, ls.k_id, dtype=np.int64))

    distinct, rank = np.unique(classes, return_inverse=True)
    if ls.k_extra < distinct.size:
        raise StrategyError(f"Oracle labeling needs k_extra >= {distinct.size} distinct OOD classes, got {ls.k_extra}")

    return PseudoLabelSet(rows, ls.k_id + rank.astype(np.int64))


def sample_reassignments(k_id: int, k_ood: int, count: int, seed: int):
    """Samples distinct injective OOD -> ID class maps.

    When `count` equals the number of available maps A(k_id, k_ood) all of
    them are enumerated in lexicographic order. When it exceeds that number
    it is capped with a warning.

    Args:
        k_id: Number of ID classes.
        k_ood: Number of OOD classes, at most k_id.
        count: Number of maps wanted.
        seed: Seed of the sampler.

    Returns:
        A list of tuples, `m[o]` being the ID class of OOD class o.
    """
    if k_ood > k_id:
        raise StrategyError(f"No injective map from {k_ood} OOD classes onto {k_id} ID classes")
    if k_ood < 1 or count < 1:
        raise StrategyError("k_ood and count must be >= 1")

    available = math.perm(k_id, k_ood)
    if count > available:
        warnings.warn(f"Only {available} injective maps exist, sampling {available} instead of {count}")
        count = available

    rng = np.random.default_rng(seed)

    if count == available:
        return list(itertools.permutations(range(k_id), k_ood))

    if available <= 100000:
        everything = list(itertools.permutations(range(k_id), k_ood))
        return [everything[i] for i in rng.choice(available, size=count, replace=False)]

    chosen, seen = [], set()
    while len(chosen) < count:
        m = tuple(int(c) for c in rng.permutation(k_id)[:k_ood])
        if m not in seen:
            seen.add(m)
            chosen.append(m)

    return chosen
