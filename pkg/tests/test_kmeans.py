import numpy as np
import pytest

from spermseg.errors import InvalidK
from spermseg.kmeans import canonical_labels, kmeans


def blobs(seed=0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0, 0.5, (30, 2)), rng.normal(10, 0.5, (30, 2))])


def test_separates_blobs():
    res = kmeans(blobs(), 2)
    assert len(set(res.labels[:30])) == 1 and len(set(res.labels[30:])) == 1
    assert res.labels[0] != res.labels[-1]


def test_inertia_trace_non_increasing():
    x = np.random.default_rng(4).random((200, 2))
    res = kmeans(x, 5, n_init=1)
    assert all(b <= a + 1e-9 for a, b in zip(res.trace, res.trace[1:]))
    assert res.inertia == pytest.approx(res.trace[-1])


def test_seeded_determinism():
    x = np.random.default_rng(5).random((100, 3))
    a, b = kmeans(x, 4, seed=9), kmeans(x, 4, seed=9)
    assert (a.labels == b.labels).all() and a.inertia == b.inertia


def test_k_one_and_invalid():
    assert (kmeans(blobs(), 1).labels == 0).all()
    with pytest.raises(InvalidK):
        kmeans(blobs(), 61)
    with pytest.raises(InvalidK):
        kmeans(blobs(), 0)


def test_duplicate_points_still_give_k_clusters():
    x = np.vstack([np.zeros((10, 2)), np.ones((1, 2))])
    res = kmeans(x, 2)
    assert len(set(res.labels)) == 2


def test_canonical_labels():
    assert canonical_labels(np.array([3, 3, 1, 0, 1])).tolist() == [0, 0, 1, 2, 1]
