import math

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import exact_transport_optimum, support_restricted_optimum
from confidence import id_confidence
from labels import LabelSpace, PredictionMatrix
from sec import (
    AssignmentMatrix,
    SinkhornConfig,
    SinkhornError,
    ZeroExtraMassError,
    harden,
    normalize_extra,
    sec,
    sec_round,
    sinkhorn_assign,
)


def _dirichlet_columns(rng, k, m, alpha=1.0):
    return rng.dirichlet(np.full(k, alpha), size=m).T


def test_single_extra_class():
    P = np.ones((1, 5))
    q = sinkhorn_assign(P)
    np.testing.assert_allclose(q.q, np.full((1, 5), 0.2))
    labels = harden(q, LabelSpace(3, 1), [4, 7, 8, 9, 11])
    assert set(labels.class_indices.tolist()) == {3}


def test_uniform_posteriors_give_uniform_plan():
    q = sinkhorn_assign(np.full((3, 6), 1.0 / 3))
    np.testing.assert_allclose(q.q, np.full((3, 6), 1.0 / 18))
    assert q.converged


def test_confident_columns_are_matched():
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    q = sinkhorn_assign(P)
    np.testing.assert_allclose(q.q, [[0.5, 0.0], [0.0, 0.5]], atol=1e-6)


def test_balance_overrides_argmax():
    # every sample prefers extra class 0, the plan still splits them evenly
    P = np.array([[0.6, 0.7, 0.8, 0.9], [0.4, 0.3, 0.2, 0.1]])
    q = sinkhorn_assign(P, SinkhornConfig(reg=1.0, max_iters=500, marginal_tol=1e-10))
    labels = harden(q, LabelSpace(2, 2), range(4))
    assert sorted(labels.class_indices.tolist()) == [2, 2, 3, 3]
    assert labels.as_dict()[3] == 2 and labels.as_dict()[0] == 3


@pytest.mark.parametrize("seed", range(5))
def test_marginals_after_rounding(seed):
    rng = np.random.default_rng(seed)
    for _ in range(40):
        k = int(rng.integers(1, 9))
        m = int(rng.integers(k, 257))
        q = sinkhorn_assign(_dirichlet_columns(rng, k, m), SinkhornConfig(25.0, 32, 1e-6))
        assert q.marginal_violation() < 1e-6
        assert q.n_iters <= 32


def test_vertex_oracle_matches_linprog(rng):
    for _ in range(20):
        k, m = (int(v) for v in rng.integers(1, 4, size=2))
        P = _dirichlet_columns(rng, k, m)
        cost = -np.log(np.maximum(P, 1e-8))
        a_eq = np.vstack([np.kron(np.eye(k), np.ones(m)), np.kron(np.ones(k), np.eye(m))])
        b_eq = np.concatenate([np.full(k, 1.0 / k), np.full(m, 1.0 / m)])
        lp = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        assert lp.status == 0
        assert exact_transport_optimum(P)[0] == pytest.approx(lp.fun, abs=1e-8)


def test_hardened_support_is_near_optimal(rng):
    # default solver settings; the LP vertex read off the plan's support
    scfg = SinkhornConfig()
    for _ in range(100):
        k, m = (int(v) for v in rng.integers(1, 4, size=2))
        P = _dirichlet_columns(rng, k, m)
        best, _ = exact_transport_optimum(P)
        q = sinkhorn_assign(P, scfg).q
        restricted = support_restricted_optimum(P, q)
        assert restricted is not None
        assert best - 1e-9 <= restricted <= 1.05 * best + 1e-9
        # the hardened entry of every column lies on that support
        hard = np.argmax(q, axis=0)
        assert np.all(q[hard, np.arange(m)] >= 1e-6 * q.max(axis=0))


def test_entropic_gap(rng):
    scfg = SinkhornConfig(reg=25.0, max_iters=2000, marginal_tol=1e-12)
    for _ in range(100):
        k, m = (int(v) for v in rng.integers(1, 4, size=2))
        P = _dirichlet_columns(rng, k, m)
        best, _ = exact_transport_optimum(P)
        got = sinkhorn_assign(P, scfg).cost(P)
        # entropic plans exceed the optimum by at most log(min(K, M)) / reg
        assert best - 1e-8 <= got <= best + math.log(min(k, m)) / scfg.reg + 0.01


def test_permuting_samples_permutes_plan(rng):
    P = _dirichlet_columns(rng, 3, 12)
    perm = rng.permutation(12)
    q = sinkhorn_assign(P).q
    np.testing.assert_allclose(sinkhorn_assign(P[:, perm]).q, q[:, perm], atol=1e-12)


def test_kernel_underflow_raises():
    P = np.array([[0.9, 0.9], [0.1, 0.1]])
    with pytest.raises(SinkhornError, match="all-zero row"):
        sinkhorn_assign(P, SinkhornConfig(reg=1e6))


@pytest.mark.parametrize("shape", [(0, 3), (2, 0)])
def test_empty_problem_rejected(shape):
    with pytest.raises(ValueError):
        sinkhorn_assign(np.ones(shape))


@pytest.mark.parametrize(
    "kwargs,field",
    [({"reg": 0.0}, "reg"), ({"max_iters": 0}, "max_iters"), ({"marginal_tol": -1.0}, "marginal_tol")],
)
def test_sinkhorn_config_validation(kwargs, field):
    with pytest.raises(ValueError, match=f"^{field}"):
        SinkhornConfig(**kwargs)


def test_assignment_matrix_checks_entries():
    with pytest.raises(ValueError):
        AssignmentMatrix(np.array([[0.5, -0.1]]))


def test_normalize_extra():
    ls = LabelSpace(2, 2)
    p = PredictionMatrix([[0.5, 0.3, 0.15, 0.05], [0.2, 0.2, 0.0, 0.6]])
    extra = normalize_extra(p, ls, [0, 1])
    assert extra.shape == (2, 2)
    np.testing.assert_allclose(extra.sum(axis=0), 1.0)
    np.testing.assert_allclose(extra[:, 0], [0.75, 0.25])
    assert extra[0, 1] > 0


def test_zero_extra_mass():
    ls = LabelSpace(2, 2)
    p = PredictionMatrix([[0.5, 0.5, 0.0, 0.0], [0.2, 0.2, 0.3, 0.3]])
    with pytest.raises(ZeroExtraMassError) as info:
        normalize_extra(p, ls, [0, 1])
    assert info.value.samples == [0]

    with pytest.warns(UserWarning):
        extra = normalize_extra(p, ls, [0, 1], strict=False)
    np.testing.assert_allclose(extra[:, 0], [0.5, 0.5])


def test_normalize_extra_needs_extra_classes():
    with pytest.raises(ValueError, match="k_extra"):
        normalize_extra(PredictionMatrix([[0.5, 0.5]]), LabelSpace(2), [0])


POOL = PredictionMatrix(
    [
        [0.05, 0.05, 0.81, 0.09],
        [0.05, 0.05, 0.09, 0.81],
        [0.90, 0.05, 0.03, 0.02],
    ]
)


def test_sec_labels_low_confidence_rows():
    ls = LabelSpace(2, 2)
    labels = sec(POOL, ls, id_confidence(POOL, ls), 0.3)
    assert labels.entries == [(0, 2), (1, 3)]


def test_sec_candidates_mask():
    ls = LabelSpace(2, 2)
    result = sec_round(POOL, ls, id_confidence(POOL, ls), 0.3, candidates=[False, True, True])
    assert result.labels.entries == [(1, 2)]
    assert result.assignment.m == 1


def test_sec_without_low_confidence_rows():
    ls = LabelSpace(2, 2)
    result = sec_round(POOL, ls, id_confidence(POOL, ls), 0.01)
    assert len(result.labels) == 0
    assert result.assignment is None


def test_sec_needs_extra_classes():
    p = PredictionMatrix([[0.5, 0.5]])
    with pytest.raises(ValueError):
        sec(p, LabelSpace(2), id_confidence(p, LabelSpace(2)), 0.9)


def test_harden_rounding_tie_goes_to_lowest_index():
    # K=2, M=1 forces the column to (0.5, 0.5) up to rounding
    labels = harden(sinkhorn_assign([[0.1], [0.9]]), LabelSpace(2, 2), [0])
    assert labels.entries == [(0, 2)]

    q = AssignmentMatrix([[0.25, 0.5 - 1e-16], [0.25 + 1e-17, 0.5]])
    assert harden(q, LabelSpace(2, 2), [3, 4]).entries == [(3, 2), (4, 2)]


def _scan_harden(q, k_id):
    labels = []
    for j in range(q.shape[1]):
        best = 0
        for i in range(1, q.shape[0]):
            if q[i, j] > q[best, j]:
                best = i
        labels.append(k_id + best)

    return labels


def test_harden_matches_column_scan(rng):
    for _ in range(50):
        k = int(rng.integers(1, 6))
        m = int(rng.integers(k, 40))
        q = sinkhorn_assign(_dirichlet_columns(rng, k, m)).q
        labels = harden(AssignmentMatrix(q), LabelSpace(3, k), range(m))
        assert labels.class_indices.tolist() == _scan_harden(q, 3)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_hardened_counts_are_nearly_balanced(rng, k):
    for _ in range(20):
        m = k * int(rng.integers(2, 9))
        q = sinkhorn_assign(_dirichlet_columns(rng, k, m))
        counts = np.bincount(harden(q, LabelSpace(2, k), range(m)).class_indices - 2, minlength=k)
        assert counts.max() - counts.min() <= k


def test_sec_labels_everything_with_one_extra_class(rng):
    ls = LabelSpace(3, 1)
    p = PredictionMatrix(rng.dirichlet(np.ones(4), size=30))
    labels = sec(p, ls, id_confidence(p, ls), 1.0 + 1e-9)
    assert labels.sample_indices.tolist() == list(range(30))
    assert set(labels.class_indices.tolist()) == {3}
