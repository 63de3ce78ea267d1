"""码本测试"""

import numpy as np
import pytest

from gmvq.core import diffcore as dc
from gmvq.core.codebook import Codebook, kmeans_init, lloyd
from gmvq.core.errors import DomainError, FormatError, NonFiniteError, ShapeError


@pytest.fixture
def codebook():
    return Codebook([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 2.0]])


class TestCodebook:
    """查表与最近邻"""

    def test_dimensions(self, codebook):
        assert codebook.C == 4
        assert codebook.L == 2
        assert codebook.M.requires_grad

    def test_lookup_selects_row(self, codebook):
        """one-hot 查表取出对应行，梯度只流向该行"""
        c_q = dc.tensor(dc.one_hot(np.array([3, 1]), 4))
        z = codebook.lookup(c_q)
        np.testing.assert_array_equal(z.value, [[0.0, 2.0], [1.0, 0.0]])
        grads = dc.backward(dc.sum(z))
        np.testing.assert_array_equal(grads[codebook.M], [[0, 0], [1, 1], [0, 0], [1, 1]])

    def test_lookup_single_vector(self, codebook):
        z = codebook.lookup(dc.one_hot(2, 4))
        np.testing.assert_array_equal(z.value, [-1.0, 0.0])

    def test_lookup_rejects_soft_vector(self, codebook):
        with pytest.raises(DomainError):
            codebook.lookup([0.5, 0.5, 0.0, 0.0])

    def test_lookup_rejects_wrong_length(self, codebook):
        with pytest.raises(ShapeError):
            codebook.lookup([1.0, 0.0, 0.0])

    def test_nearest_tie_breaks_to_lowest_index(self, codebook):
        """等距时取最小下标"""
        assert codebook.nearest([0.5, 0.0]) == 0
        assert codebook.nearest([-0.5, 0.0]) == 0

    def test_nearest_batch(self, codebook):
        np.testing.assert_array_equal(codebook.nearest([[0.9, 0.1], [0.1, 1.9]]), [1, 3])

    def test_nearest_rejects_non_finite(self, codebook):
        with pytest.raises(NonFiniteError):
            codebook.nearest([np.inf, 0.0])

    def test_invalid_shapes(self):
        with pytest.raises(DomainError):
            Codebook([[1.0, 2.0]])
        with pytest.raises(ShapeError):
            Codebook([1.0, 2.0])


class TestCodebookSerialization:
    """码本段读写"""

    def test_round_trip(self, codebook):
        payload = b"prefix" + codebook.to_bytes()
        restored, end = Codebook.from_bytes(payload, offset=6)
        assert end == len(payload)
        np.testing.assert_array_equal(restored.M.value, codebook.M.value)

    def test_bad_magic(self, codebook):
        payload = b"XXXX" + codebook.to_bytes()[4:]
        with pytest.raises(FormatError):
            Codebook.from_bytes(payload)

    def test_truncated(self, codebook):
        with pytest.raises(FormatError):
            Codebook.from_bytes(codebook.to_bytes()[:-1])


class TestKMeans:
    """k-means++ 初始化"""

    def test_recovers_separated_clusters(self, rng):
        """分离良好的簇：质心贴近真实均值"""
        means = np.array([[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0]])
        points = np.concatenate([m + 0.05 * rng.standard_normal((50, 2)) for m in means])
        book = kmeans_init(points, 3, iters=10, seed=0)
        found = np.sort(book.M.value, axis=0)
        np.testing.assert_allclose(found, np.sort(means, axis=0), atol=0.05)

    def test_requires_enough_points(self, rng):
        with pytest.raises(DomainError):
            kmeans_init(rng.standard_normal((3, 2)), 4)

    def test_degenerate_data_is_jittered(self):
        """所有点相同时质心为该点加 1e-4 量级抖动"""
        points = np.tile([1.0, -2.0], (10, 1))
        book = kmeans_init(points, 4, seed=0)
        assert len({tuple(row) for row in book.M.value}) == 4
        assert np.max(np.abs(book.M.value - [1.0, -2.0])) < 1e-2

    def test_deterministic_given_seed(self, rng):
        points = rng.standard_normal((40, 3))
        a = kmeans_init(points, 5, seed=7)
        b = kmeans_init(points, 5, seed=7)
        np.testing.assert_array_equal(a.M.value, b.M.value)

    def test_lloyd_objective_non_increasing(self, rng):
        points = rng.standard_normal((60, 2))
        _, history = lloyd(points, points[:6], iters=8)
        assert np.all(np.diff(history) <= 1e-9)

    def test_empty_cluster_is_reseeded(self, rng):
        """远离数据的质心会被重新播种，最终没有空簇"""
        points = rng.standard_normal((30, 2))
        start = np.array([[0.0, 0.0], [0.5, 0.5], [100.0, 100.0]])
        centroids, _ = lloyd(points, start, iters=5)
        assign = np.argmin(((points[:, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
        assert set(assign) == {0, 1, 2}
