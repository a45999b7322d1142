import itertools
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "lib"))
sys.path.insert(0, os.path.join(ROOT, "lib", "upsilon"))

import config as cfg  # noqa: E402
from datagen import BenchmarkSpec  # noqa: E402
from labels import PredictionMatrix  # noqa: E402
from train import TrainConfig  # noqa: E402

SAMPLE_CSV = os.path.join(ROOT, "lib", "upsilon", "sample_data", "mismatch_sample.csv")
EXPERIMENTS = os.path.join(ROOT, "lib", "upsilon", "experiments")


@pytest.fixture(autouse=True)
def restore_config():
    snapshot = cfg.getConfig()
    yield
    cfg.setConfig(snapshot)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_prediction_matrix(rng, rows, cols, alpha=1.0):
    return PredictionMatrix(rng.dirichlet(np.full(cols, alpha), size=rows))


@pytest.fixture
def make_probs(rng):
    def make(rows, cols, alpha=1.0):
        return random_prediction_matrix(rng, rows, cols, alpha)

    return make


@pytest.fixture
def small_spec():
    return BenchmarkSpec(
        k_id=3,
        k_ood=2,
        d=4,
        n_labeled_per_class=10,
        m_unlabeled=60,
        n_test_per_class=20,
        mismatch_ratio=0.5,
        class_separation=4.0,
        noise_sigma=1.0,
        seed=7,
    )


@pytest.fixture
def small_train():
    return TrainConfig(
        epochs=6,
        pretrain_epochs=2,
        pl_interval=1,
        batch_size=16,
        hidden_units=8,
        k_extra=2,
        tau=0.9,
        gamma=0.5,
        seed=11,
    )


def transport_vertices(k, m):
    """All vertices of U(k, m) by enumerating bases of the marginal system."""
    a = np.zeros((k + m, k * m))
    for i in range(k):
        for j in range(m):
            a[i, i * m + j] = 1.0
            a[k + j, i * m + j] = 1.0
    b = np.concatenate([np.full(k, 1.0 / k), np.full(m, 1.0 / m)])

    vertices = []
    for support in itertools.combinations(range(k * m), k + m - 1):
        cols = a[:, support]
        if np.linalg.matrix_rank(cols) < k + m - 1:
            continue
        x, *_ = np.linalg.lstsq(cols, b, rcond=None)
        if np.abs(cols @ x - b).max() > 1e-10 or x.min() < -1e-12:
            continue
        q = np.zeros(k * m)
        q[list(support)] = np.maximum(x, 0.0)
        q = q.reshape(k, m)
        if not any(np.allclose(q, v) for v in vertices):
            vertices.append(q)

    return vertices


def exact_transport_optimum(P, clamp=1e-8):
    """Minimum of <Q, -log P> over U(K, M) and a minimizing vertex."""
    cost = -np.log(np.maximum(P, clamp))
    vertices = transport_vertices(*P.shape)
    values = [float((v * cost).sum()) for v in vertices]
    best = int(np.argmin(values))

    return values[best], vertices[best]


def support_restricted_optimum(P, q, rel=1e-6, clamp=1e-8):
    """Minimum of <Q, -log P> over the vertices of U(K, M) that only use
    entries where q is at least `rel` times its column maximum."""
    cost = -np.log(np.maximum(P, clamp))
    support = q >= rel * q.max(axis=0, keepdims=True)
    values = [float((v * cost).sum()) for v in transport_vertices(*P.shape) if not np.any((v > 1e-12) & ~support)]

    return min(values) if values else None
