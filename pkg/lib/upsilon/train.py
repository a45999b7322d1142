"""Training loop of the classifier with periodic pseudo-labeling rounds.

Epochs are 1-based. Epochs before the pretrain count train on the labeled
data only; from epoch E_pt on, every E_pl-th epoch ends with a labeling
round that rebuilds the pseudo-label set from the pool.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

import config as cfg
import diagnostics
import model
import utils
from confidence import ConfidenceMeasure, compute_confidence
from labels import LabelSpace, PseudoLabelSet, predict_id_label
from pseudo_labeling import compute_rpl_thresholds, rebalanced_pl, vanilla_pl
from sec import SinkhornConfig, sec_round
from strategies import Strategy, StrategyError, StrategyKind, label_ood

LOG_COLUMNS = ["epoch", "split", "accuracy", "loss", "n_pseudo_rpl", "n_pseudo_sec", "ood_as_id_prop", "kl_imbalance"]


class ConfigError(ValueError):
    """A training config violates its invariants. `key` names the field."""

    def __init__(self, key, msg):
        self.key = key
        super().__init__(f"{key}: {msg}")


class VariantError(ValueError):
    """A variant is unknown or inconsistent with the training config."""


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.95
    gamma: float = 0.3
    k_extra: int = 4
    epochs: int = 400
    pretrain_epochs: int = 50
    pl_interval: int = 2
    learning_rate: float = 3e-3
    batch_size: int = 128
    ema_decay: float = 0.999
    ema_warmup: bool = False
    lambda_ramp: bool = False
    ramp_horizon: int = 40000
    hidden_units: int = 32
    activation: str = "relu"
    confidence: str = "maxprob"
    confidence_id_only: bool = False
    pl_source: str = "raw"
    last_epochs_fraction: float = 0.05
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    seed: int = 42

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Raises `ConfigError` naming the first violated field."""
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau", f"must be in (0, 1), got {self.tau}")
        try:
            measure = ConfidenceMeasure(self.confidence)
        except ValueError:
            raise ConfigError("confidence", f"unknown measure '{self.confidence}'")
        if measure is ConfidenceMeasure.MAX_PROB and not 0.0 < self.gamma <= self.tau:
            raise ConfigError("gamma", f"must satisfy 0 < gamma <= tau = {self.tau}, got {self.gamma}")
        if measure is ConfidenceMeasure.NEG_ENTROPY and not self.gamma <= 0.0:
            raise ConfigError("gamma", f"negative-entropy threshold must be <= 0, got {self.gamma}")
        if measure is ConfidenceMeasure.SCORE_DIFF and not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma", f"score-difference threshold must be in (0, 1], got {self.gamma}")
        if self.k_extra < 0:
            raise ConfigError("k_extra", f"must be >= 0, got {self.k_extra}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be >= 1, got {self.epochs}")
        if not 0 <= self.pretrain_epochs < self.epochs:
            raise ConfigError("pretrain_epochs", f"must be in [0, epochs), got {self.pretrain_epochs}")
        if self.pl_interval < 1:
            raise ConfigError("pl_interval", f"must be >= 1, got {self.pl_interval}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay", f"must be in [0, 1), got {self.ema_decay}")
        if self.ramp_horizon < 1:
            raise ConfigError("ramp_horizon", f"must be >= 1, got {self.ramp_horizon}")
        if self.hidden_units < 0:
            raise ConfigError("hidden_units", f"must be >= 0, got {self.hidden_units}")
        if self.activation not in model.ACTIVATIONS:
            raise ConfigError("activation", f"must be one of {model.ACTIVATIONS}, got '{self.activation}'")
        if self.pl_source not in ("raw", "ema"):
            raise ConfigError("pl_source", f"must be 'raw' or 'ema', got '{self.pl_source}'")
        if not 0.0 < self.last_epochs_fraction <= 1.0:
            raise ConfigError("last_epochs_fraction", f"must be in (0, 1], got {self.last_epochs_fraction}")

        return self

    @classmethod
    def from_cfg(cls, **overrides):
        values = dict(
            tau=cfg.TAU,
            gamma=cfg.GAMMA,
            k_extra=cfg.K_EXTRA,
            epochs=cfg.EPOCHS,
            pretrain_epochs=cfg.PRETRAIN_EPOCHS,
            pl_interval=cfg.PL_INTERVAL,
            learning_rate=cfg.LEARNING_RATE,
            batch_size=cfg.BATCH_SIZE,
            ema_decay=cfg.EMA_DECAY,
            ema_warmup=cfg.EMA_WARMUP,
            lambda_ramp=cfg.LAMBDA_RAMP,
            ramp_horizon=cfg.RAMP_HORIZON,
            hidden_units=cfg.HIDDEN_UNITS,
            activation=cfg.HIDDEN_ACTIVATION,
            confidence=cfg.CONFIDENCE_MEASURE,
            confidence_id_only=cfg.CONFIDENCE_ID_COLUMNS_ONLY,
            pl_source=cfg.PL_SOURCE,
            last_epochs_fraction=cfg.LAST_EPOCHS_FRACTION,
            sinkhorn=SinkhornConfig.from_cfg(),
            seed=cfg.RANDOM_SEED,
        )
        values.update(overrides)

        return cls(**values)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def is_labeling_epoch(self, epoch: int):
        return epoch >= self.pretrain_epochs and epoch % self.pl_interval == 0


def lambda_ramp(iteration: int, horizon: int):
    """Weight of the pseudo-label loss, exp(-5 (1 - min(iter / horizon, 1))^2).

    Args:
        iteration: Training steps since the end of pretraining, >= 0.
        horizon: Steps until the weight reaches 1.
    """
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")

    return float(math.exp(-5.0 * (1.0 - min(iteration / horizon, 1.0)) ** 2))


class VariantKind(str, Enum):
    UPSILON = "upsilon"
    VANILLA_PL = "vanilla_pl"
    RPL_ONLY = "rpl_only"
    SEC_ONLY = "sec_only"
    OPENSET_K1 = "openset_k1"
    STRATEGY = "strategy"


@dataclass(frozen=True)
class Variant:
    """A training variant.

    upsilon      RPL on confident samples, SEC on the low-confidence ones.
    vanilla_pl   Thresholded pseudo-labels only.
    rpl_only     RPL only.
    sec_only     Thresholded pseudo-labels plus SEC.
    openset_k1   RPL plus one unified extra class for low-confidence samples.
    strategy:K   Fixed OOD labels of strategy K (baseline is labeled-only).
    """

    kind: VariantKind
    strategy: Optional[Strategy] = None

    @classmethod
    def parse(cls, text: str):
        name = text.strip().lower()
        if name == "baseline":
            name = "strategy:baseline"
        if name.startswith("strategy:"):
            try:
                return cls(VariantKind.STRATEGY, Strategy(StrategyKind(name.split(":", 1)[1])))
            except ValueError:
                raise VariantError(f"Unknown strategy in variant '{text}'")
        try:
            return cls(VariantKind(name))
        except ValueError:
            raise VariantError(f"Unknown variant '{text}'")

    @property
    def name(self):
        if self.kind is VariantKind.STRATEGY:
            return f"strategy:{self.strategy.kind.value}"

        return self.kind.value

    @property
    def uses_rounds(self):
        return self.kind is not VariantKind.STRATEGY

    def adapt_config(self, tcfg: TrainConfig, k_ood: int = None):
        """Sets k_extra to what the variant needs.

        OpenSetK1 and OpenSet use one extra class, Oracle one per OOD class,
        VanillaPL, RPLOnly, Baseline and ReAssigned none. The upsilon variant and SECOnly
        keep the configured K.
        """
        if self.kind is VariantKind.OPENSET_K1:
            return tcfg.replace(k_extra=1)
        if self.kind in (VariantKind.VANILLA_PL, VariantKind.RPL_ONLY):
            return tcfg.replace(k_extra=0)
        if self.kind is VariantKind.STRATEGY:
            if self.strategy.kind is StrategyKind.OPENSET:
                return tcfg.replace(k_extra=1)
            if self.strategy.kind is StrategyKind.ORACLE:
                if k_ood is None:
                    raise VariantError("Oracle needs the number of OOD classes")
                return tcfg.replace(k_extra=int(k_ood))
            return tcfg.replace(k_extra=0)

        return tcfg

    def check(self, tcfg: TrainConfig):
        if self.kind is VariantKind.OPENSET_K1 and tcfg.k_extra != 1:
            raise VariantError(f"openset_k1 needs k_extra = 1, got {tcfg.k_extra}")
        if self.kind is VariantKind.SEC_ONLY and tcfg.k_extra < 1:
            raise VariantError("sec_only needs k_extra >= 1")
        if self.kind is VariantKind.STRATEGY and self.strategy.kind is StrategyKind.REASSIGNED:
            if self.strategy.reassignment is None:
                raise VariantError("strategy:reassigned needs an OOD -> ID class map")


@dataclass(frozen=True)
class RoundRecord:
    """What a labeling round produced."""

    epoch: int
    quota: int
    tau_y: Tuple[float, ...]
    n_rpl: int
    n_sec: int
    histogram: Tuple[int, ...]
    ood_as_id: float
    sinkhorn_iters: int = 0
    row_violation: float = 0.0


@dataclass
class TrainResult:
    ema: model.EmaModel
    params: model.ClassifierParams
    log: pd.DataFrame
    rounds: List[RoundRecord]
    label_space: LabelSpace
    last_epochs_fraction: float = 0.05

    @property
    def final_accuracy(self):
        """Mean test accuracy over the last fraction of the epochs."""
        test = self.log[self.log["split"] == "test"]
        n = max(1, int(math.ceil(self.last_epochs_fraction * len(test))))

        return float(test["accuracy"].iloc[-n:].mean())

    def predict(self, x):
        return predict_id_label(model.forward(self.ema.shadow, x), self.label_space)


def labeling_round(params, pool_x, ls: LabelSpace, tcfg: TrainConfig, variant: Variant):
    """Builds the pseudo-label set of one round from a snapshot of the model.

    Returns:
        (pseudo-label set, n_rpl, n_sec, quota, tau_y, sinkhorn assignment or None)
    """
    p = model.forward(params, pool_x)
    kind = variant.kind

    thresholds = compute_rpl_thresholds(p, ls, tcfg.tau)
    if kind in (VariantKind.VANILLA_PL, VariantKind.SEC_ONLY):
        high = vanilla_pl(p, ls, tcfg.tau)
    else:
        high = rebalanced_pl(p, ls, tcfg.tau, thresholds)

    low, assignment = PseudoLabelSet.empty(), None

    if kind in (VariantKind.UPSILON, VariantKind.SEC_ONLY, VariantKind.OPENSET_K1) and ls.k_extra > 0:
        conf = compute_confidence(p, ls, tcfg.confidence, tcfg.confidence_id_only)
        candidates = np.ones(p.rows, dtype=bool)
        candidates[high.sample_indices] = False

        if kind is VariantKind.OPENSET_K1:
            rows = np.flatnonzero(conf.below(tcfg.gamma) & candidates)
            low = PseudoLabelSet(rows, np.full(rows.size, ls.k_id, dtype=np.int64))
        else:
            r = sec_round(p, ls, conf, tcfg.gamma, tcfg.sinkhorn, candidates, strict=False)
            low, assignment = r.labels, r.assignment

    return high.union(low).validate(ls), len(high), len(low), thresholds.n, thresholds.tau_y, assignment


def _histogram(pl_set, ls):
    return diagnostics.LabelHistogram.from_labels(pl_set.class_indices, ls.total)


def _kl_id(pl_set, ls):
    h = diagnostics.LabelHistogram(_histogram(pl_set, ls).counts[: ls.k_id])

    return diagnostics.kl_to_uniform(h) if h.total else float("nan")


def _accuracy(params, dataset, ls):
    if len(dataset.test_y) == 0:
        return float("nan")
    pred = predict_id_label(model.forward(params, dataset.test_x), ls)

    return float(np.mean(pred == dataset.test_y))


def train_variant(dataset, tcfg: TrainConfig, variant, verbose: bool = False):
    """Trains a classifier with the labeling branches a variant names.

    Every epoch iterates over a fresh permutation of the pool in batches of
    batch_size (at least one step) and draws a labeled batch of the same
    size with replacement for every step. Pool samples that carry a
    pseudo-label join the step with weight lambda. The EMA model is updated
    after every step and evaluated on the ID test split after every epoch.

    Args:
        dataset: A `MismatchedDataset`.
        tcfg: The training config.
        variant: A `Variant` or its name.
        verbose: Print status and show a progress bar.

    Returns:
        A `TrainResult`.
    """
    variant = Variant.parse(variant) if isinstance(variant, str) else variant
    tcfg.validate()
    variant.check(tcfg)

    ls = LabelSpace(dataset.k_id, tcfg.k_extra)
    params = model.buildClassifier(dataset.dim, ls.total, tcfg.hidden_units, tcfg.activation, seed=utils.derived_rng(tcfg.seed, 0).integers(2**31 - 1))
    state = model.AdamState.for_params(params)
    ema = model.EmaModel(params, tcfg.ema_decay, tcfg.ema_warmup)
    rng = utils.derived_rng(tcfg.seed, 1)

    m, n_l = dataset.m_unlabeled, dataset.n_labeled
    steps_per_epoch = max(1, int(math.ceil(m / tcfg.batch_size)))
    pl_class = np.full(m, -1, dtype=np.int64)
    current = PseudoLabelSet.empty()
    n_rpl = n_sec = 0
    steps_since_pt = 0
    rows, rounds = [], []

    fixed = None
    if variant.kind is VariantKind.STRATEGY:
        try:
            fixed = label_ood(dataset.ground_truth, dataset.ood_mask, variant.strategy, ls)
        except StrategyError as ex:
            raise VariantError(str(ex))

    if verbose:
        print(f"Training {variant.name} model...", flush=True)

    for epoch in tqdm(range(1, tcfg.epochs + 1), disable=not verbose):
        perm = rng.permutation(m)
        losses = []

        for s in range(steps_per_epoch):
            idx_u = perm[s * tcfg.batch_size : (s + 1) * tcfg.batch_size]
            idx_l = rng.integers(0, n_l, size=tcfg.batch_size)
            idx_p = idx_u[pl_class[idx_u] >= 0]

            weight = 1.0
            if tcfg.lambda_ramp and epoch > tcfg.pretrain_epochs:
                weight = lambda_ramp(steps_since_pt, tcfg.ramp_horizon)

            pseudo = (dataset.unlabeled_x[idx_p], pl_class[idx_p]) if idx_p.size else None
            params, step = model.supervised_step(
                params, state, (dataset.labeled_x[idx_l], dataset.labeled_y[idx_l]), pseudo, weight, tcfg.learning_rate
            )
            ema.update(params)
            losses.append(step.total)
            if epoch > tcfg.pretrain_epochs:
                steps_since_pt += 1

        if tcfg.is_labeling_epoch(epoch):
            source = ema.shadow if tcfg.pl_source == "ema" else params
            assignment = None

            if fixed is not None:
                current, quota, tau_y = fixed, 0, np.full(ls.k_id, np.nan)
                n_rpl = int((fixed.class_indices < ls.k_id).sum())
                n_sec = len(fixed) - n_rpl
            else:
                current, n_rpl, n_sec, quota, tau_y, assignment = labeling_round(source, dataset.unlabeled_x, ls, tcfg, variant)

            pl_class[:] = -1
            pl_class[current.sample_indices] = current.class_indices
            rounds.append(
                RoundRecord(
                    epoch=epoch,
                    quota=int(quota),
                    tau_y=tuple(float(t) for t in tau_y),
                    n_rpl=n_rpl,
                    n_sec=n_sec,
                    histogram=tuple(int(c) for c in _histogram(current, ls).counts),
                    ood_as_id=diagnostics.ood_as_id_proportion(current, dataset.ood_mask, ls),
                    sinkhorn_iters=assignment.n_iters if assignment is not None else 0,
                    row_violation=assignment.row_violation if assignment is not None else 0.0,
                )
            )

        rows.append(
            {
                "epoch": epoch,
                "split": "test",
                "accuracy": _accuracy(ema.shadow, dataset, ls),
                "loss": float(np.mean(losses)),
                "n_pseudo_rpl": n_rpl,
                "n_pseudo_sec": n_sec,
                "ood_as_id_prop": diagnostics.ood_as_id_proportion(current, dataset.ood_mask, ls),
                "kl_imbalance": _kl_id(current, ls),
            }
        )

    if verbose:
        print("...Done.", flush=True)

    return TrainResult(ema, params, pd.DataFrame(rows, columns=LOG_COLUMNS), rounds, ls, tcfg.last_epochs_fraction)


def train_upsilon(dataset, tcfg: TrainConfig, verbose: bool = False):
    """Trains the two-branch model: RPL on confident samples and SEC on the rest.

    With k_extra = 0 the SEC branch is skipped.
    """
    return train_variant(dataset, tcfg, Variant(VariantKind.UPSILON), verbose)


def fit_labeled_only(tcfg: TrainConfig, dataset, seed: int):
    """Parameters of a labeled-only model; picklable through functools.partial."""
    return train_variant(dataset, tcfg.replace(seed=int(seed)), Variant.parse("baseline")).ema.shadow
