"""Semantic Exploration Clustering (SEC).

Low-confidence samples are assigned to the K extra classes by a balanced
optimal-transport problem over the transportation polytope U(K, M)
(rows sum to 1/K, columns to 1/M) with cost -log P, solved with
Sinkhorn-Knopp scaling of the kernel P ** reg, and the soft plan is
hardened by a column-wise argmax.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

import config as cfg
from confidence import ConfidenceVector
from labels import LabelSpace, PredictionMatrix, PseudoLabelSet


class ZeroExtraMassError(ValueError):
    """Samples put no probability mass on any extra class."""

    def __init__(self, samples):
        self.samples = list(samples)
        super().__init__(f"{len(self.samples)} sample(s) have zero extra-class mass: {self.samples[:10]}")


class SinkhornError(ValueError):
    """The Sinkhorn kernel is not usable (non-finite or an empty row)."""


@dataclass(frozen=True)
class SinkhornConfig:
    reg: float = 25.0
    max_iters: int = 32
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.reg > 0:
            raise ValueError(f"reg must be > 0, got {self.reg}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.marginal_tol > 0:
            raise ValueError(f"marginal_tol must be > 0, got {self.marginal_tol}")

    @classmethod
    def from_cfg(cls):
        return cls(cfg.SINKHORN_REG, cfg.SINKHORN_ITERS, cfg.SINKHORN_TOL)


@dataclass(frozen=True)
class AssignmentMatrix:
    """Soft assignment Q of M samples to K extra classes.

    Attributes:
        q: K x M nonnegative matrix on U(K, M).
        n_iters: Sinkhorn iterations performed.
        row_violation: Max row-marginal deviation after the final column
            normalization, before the plan was rounded onto U(K, M).
        converged: Whether row_violation reached the tolerance.
    """

    q: np.ndarray
    n_iters: int = 0
    row_violation: float = 0.0
    converged: bool = True

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True)
        if q.ndim != 2:
            raise ValueError(f"Q must be a K x M matrix, got shape {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("Q must be finite and nonnegative")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def k(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.q.shape[1]

    def marginal_violation(self):
        """Max absolute deviation of either marginal from uniform."""
        rows = np.abs(self.q.sum(axis=1) - 1.0 / self.k).max()
        cols = np.abs(self.q.sum(axis=0) - 1.0 / self.m).max()

        return float(max(rows, cols))

    def cost(self, p):
        """Transport cost <Q, -log P> with P clamped like the solver does."""
        return float((self.q * -np.log(np.maximum(p, cfg.PROB_CLAMP))).sum())


def normalize_extra(p: PredictionMatrix, ls: LabelSpace, sample_subset, strict: bool = True):
    """Normalized posterior on the extra classes for a subset of samples.

    P[i][j] = f(k_id + i | x_j) / sum_k f(k_id + k | x_j). Entries are clamped
    to cfg.PROB_CLAMP and each column renormalized.

    Args:
        p: Prediction matrix of the pool.
        ls: Label space with k_extra >= 1.
        sample_subset: Row indices of p.
        strict: Raise `ZeroExtraMassError` for samples with no extra-class
            mass. Otherwise warn and give those samples a uniform column.

    Returns:
        K x M matrix whose columns sum to 1.
    """
    p.check_space(ls)
    if ls.k_extra == 0:
        raise ValueError("SEC needs at least one extra class (k_extra = 0)")

    subset = np.asarray(sample_subset, dtype=np.int64).reshape(-1)
    if subset.size == 0:
        raise ValueError("SEC needs a nonempty sample subset")

    extra = p.probs[subset, ls.k_id :]
    mass = extra.sum(axis=1)
    zero = mass <= 0

    if np.any(zero):
        if strict:
            raise ZeroExtraMassError(subset[zero].tolist())
        warnings.warn(f"{int(zero.sum())} sample(s) without extra-class mass get a uniform column")

    cols = np.divide(extra, mass[:, None], out=np.full_like(extra, 1.0 / ls.k_extra), where=~zero[:, None])
    cols = np.maximum(cols, cfg.PROB_CLAMP)
    cols /= cols.sum(axis=1, keepdims=True)

    return cols.T.copy()


def _round_to_polytope(q, r, c):
    # Scale overfull rows and columns down, then spread the missing mass
    # with a rank-one correction; the result has both marginals exactly.
    x = np.minimum(r / q.sum(axis=1), 1.0)
    q = q * x[:, None]
    y = np.minimum(c / q.sum(axis=0), 1.0)
    q = q * y[None, :]
    err_r = np.maximum(r - q.sum(axis=1), 0.0)
    err_c = np.maximum(c - q.sum(axis=0), 0.0)
    s = err_r.sum()

    if s > 0:
        q = q + np.outer(err_r, err_c) / s

    return q


def sinkhorn_assign(P, scfg: Optional[SinkhornConfig] = None):
    """Balanced soft assignment by Sinkhorn-Knopp.

    Approximately solves min <Q, -log P> over U(K, M) with entropic
    regularization by alternating row and column scalings of the kernel
    P ** reg. Stops once the row-marginal violation is below marginal_tol or
    after max_iters. Each call owns its scaling vectors.

    Args:
        P: K x M matrix whose columns are probability vectors.
        scfg: Solver settings. Defaults to `SinkhornConfig.from_cfg()`.

    Returns:
        An `AssignmentMatrix` on U(K, M).
    """
    scfg = scfg or SinkhornConfig.from_cfg()
    P = np.asarray(P, dtype=np.float64)

    if P.ndim != 2 or P.shape[0] < 1 or P.shape[1] < 1:
        raise ValueError(f"P must be a K x M matrix with K, M >= 1, got shape {P.shape}")

    k, m = P.shape
    r = np.full(k, 1.0 / k)
    c = np.full(m, 1.0 / m)

    # Column-wise shift of the log kernel is absorbed by the column scaling
    with np.errstate(over="ignore", invalid="ignore"):
        log_kernel = scfg.reg * np.log(np.maximum(P, cfg.PROB_CLAMP))
        log_kernel = log_kernel - log_kernel.max(axis=0, keepdims=True)
        kernel = np.exp(log_kernel)

    if not np.all(np.isfinite(kernel)):
        raise SinkhornError(f"Non-finite Sinkhorn kernel with reg={scfg.reg}; lower reg")
    if np.any(kernel.sum(axis=1) <= 0):
        raise SinkhornError(f"Sinkhorn kernel underflows to an all-zero row with reg={scfg.reg}; lower reg")

    v = np.ones(m)
    violation = np.inf
    n_iters = 0

    for n_iters in range(1, scfg.max_iters + 1):
        u = r / (kernel @ v)
        v = c / (kernel.T @ u)
        violation = float(np.abs(u * (kernel @ v) - r).max())
        if violation <= scfg.marginal_tol:
            break

    q = u[:, None] * kernel * v[None, :]
    q = q * (c / q.sum(axis=0))[None, :]
    row_violation = float(np.abs(q.sum(axis=1) - r).max())

    if not np.all(np.isfinite(q)):
        raise SinkhornError(f"Sinkhorn scaling produced non-finite values with reg={scfg.reg}; lower reg")

    return AssignmentMatrix(
        _round_to_polytope(q, r, c),
        n_iters=n_iters,
        row_violation=row_violation,
        converged=row_violation <= scfg.marginal_tol,
    )


def harden(q: AssignmentMatrix, ls: LabelSpace, sample_subset):
    """Hardens a soft assignment: sample j gets k_id + argmax_i Q[i][j].

    Ties go to the lowest extra-class index. Entries within cfg.HARDEN_TIE_TOL
    (relative) of the column maximum are ties, so rounding noise of the
    scaling loop cannot break them.
    """
    subset = np.asarray(sample_subset, dtype=np.int64).reshape(-1)
    if subset.size != q.m:
        raise ValueError(f"{subset.size} samples for an assignment over {q.m} samples")
    if q.k != ls.k_extra:
        raise ValueError(f"Assignment has {q.k} rows but the label space has {ls.k_extra} extra classes")

    col_max = q.q.max(axis=0)
    tied = q.q >= col_max * (1.0 - cfg.HARDEN_TIE_TOL)

    return PseudoLabelSet(subset, ls.k_id + np.argmax(tied, axis=0))


@dataclass(frozen=True)
class SecRound:
    labels: PseudoLabelSet
    assignment: Optional[AssignmentMatrix] = None


def sec_round(p, ls, conf: ConfidenceVector, gamma, scfg=None, candidates=None, strict=True):
    """SEC with the intermediate assignment, see `sec`."""
    if ls.k_extra < 1:
        raise ValueError("SEC needs at least one extra class (k_extra = 0)")
    if len(conf) != p.rows:
        raise ValueError(f"{len(conf)} confidence values for {p.rows} samples")

    mask = conf.below(gamma)
    if candidates is not None:
        mask &= np.asarray(candidates, dtype=bool)
    subset = np.flatnonzero(mask)

    if subset.size == 0:
        return SecRound(PseudoLabelSet.empty())

    assignment = sinkhorn_assign(normalize_extra(p, ls, subset, strict=strict), scfg)

    return SecRound(harden(assignment, ls, subset), assignment)


def sec(p: PredictionMatrix, ls: LabelSpace, conf: ConfidenceVector, gamma: float, scfg=None, candidates=None):
    """Semantic Exploration Clustering of the low-confidence samples.

    Selects {x : c(x) < gamma} (optionally intersected with `candidates`),
    then composes normalize_extra, sinkhorn_assign and harden.

    Returns:
        A `PseudoLabelSet` over the extra classes; empty if no sample is
        below gamma.
    """
    return sec_round(p, ls, conf, gamma, scfg, candidates).labels
