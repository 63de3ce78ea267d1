"""采样、重参数化与温度退火测试"""

import numpy as np
import pytest
from scipy.special import log_softmax, softmax

from gmvq.core import diffcore as dc
from gmvq.core.codebook import Codebook
from gmvq.core.errors import DomainError, ShapeError
from gmvq.core.sampling import (
    LatentNoise,
    TemperatureSchedule,
    deterministic_latent,
    gumbel_softmax_sample,
    reparameterize_z,
    sample_gumbel,
    sample_latent,
    select_codeword,
    ste_quantize,
    temperature,
)


class TestGumbelSoftmax:
    """Gumbel-Softmax 采样"""

    @pytest.mark.parametrize("num_components", [4, 32])
    def test_hard_samples_match_posterior(self, num_components):
        """10^5 次硬采样的经验分布与 q(c|x) 的总变差 < 0.01"""
        rng = np.random.default_rng(num_components)
        probs = softmax(rng.normal(size=num_components))
        draws = 100_000
        log_pi = np.tile(np.log(probs), (draws, 1))
        _, c_q = gumbel_softmax_sample(log_pi, tau=1.0, rng=rng)
        empirical = c_q.value.mean(axis=0)
        assert 0.5 * np.abs(empirical - probs).sum() < 0.01

    @pytest.mark.parametrize("num_components", [4, 32])
    def test_low_temperature_soft_sample_is_one_hot(self, num_components):
        """τ=0.01：扰动后前两名间隔超过 τ·log(1000(C−1)) 的抽样一定与 one-hot 相差 < 1e-3

        间隔小于该值的抽样只占一小部分，整体比例 > 0.9。
        """
        tau = 0.01
        rng = np.random.default_rng(100 + num_components)
        probs = softmax(rng.normal(size=num_components))
        log_pi = np.tile(np.log(probs), (2000, 1))
        gumbel = sample_gumbel(rng, log_pi.shape)
        soft, c_q = gumbel_softmax_sample(log_pi, tau=tau, gumbel=gumbel)
        deviation = np.max(np.abs(soft.value - c_q.value), axis=-1)

        perturbed = np.sort(log_pi + gumbel, axis=-1)
        separated = perturbed[:, -1] - perturbed[:, -2] > tau * np.log(1000.0 * (num_components - 1))
        assert np.all(deviation[separated] < 1e-3)
        assert np.mean(deviation < 1e-3) > 0.9

    def test_hard_sample_is_exact_one_hot(self, rng):
        _, c_q = gumbel_softmax_sample(np.log([[0.2, 0.3, 0.5]] * 10), tau=0.7, rng=rng)
        assert set(np.unique(c_q.value)) <= {0.0, 1.0}
        np.testing.assert_array_equal(c_q.value.sum(axis=-1), np.ones(10))

    def test_straight_through_gradient_equals_soft_gradient(self, rng):
        """c_q 的反向梯度与 soft 的梯度相同"""
        gumbel = sample_gumbel(rng, (3, 4))
        weights = rng.normal(size=(3, 4))
        logits_a = dc.tensor(rng.normal(size=(3, 4)), requires_grad=True)
        logits_b = dc.tensor(logits_a.value, requires_grad=True)
        _, c_q = gumbel_softmax_sample(logits_a, 0.5, gumbel=gumbel)
        soft, _ = gumbel_softmax_sample(logits_b, 0.5, gumbel=gumbel, hard=False)
        grad_hard = dc.backward(dc.sum(dc.mul(c_q, weights)))[logits_a]
        grad_soft = dc.backward(dc.sum(dc.mul(soft, weights)))[logits_b]
        np.testing.assert_allclose(grad_hard, grad_soft)

    def test_soft_mode_returns_soft_sample(self, rng):
        soft, c_q = gumbel_softmax_sample(np.log([0.5, 0.5]), tau=1.0, rng=rng, hard=False)
        assert soft is c_q

    def test_non_positive_temperature(self, rng):
        with pytest.raises(DomainError):
            gumbel_softmax_sample(np.log([0.5, 0.5]), tau=0.0, rng=rng)

    def test_noise_shape_checked(self):
        with pytest.raises(ShapeError):
            gumbel_softmax_sample(np.log([0.5, 0.5]), tau=1.0, gumbel=np.zeros(3))

    def test_gumbel_noise_is_finite(self, rng):
        g = sample_gumbel(rng, (1000,))
        assert np.all(np.isfinite(g))
        assert abs(g.mean() - np.euler_gamma) < 0.1


class TestReparameterization:
    """连续潜变量的重参数化"""

    @pytest.fixture
    def codebook(self):
        return Codebook([[0.0, 0.0], [1.0, 2.0], [-1.0, 3.0]])

    def test_reparameterize_z(self, codebook):
        c_q = dc.one_hot(np.array([1, 2]), 3)
        eps = np.array([[1.0, -1.0], [0.5, 0.0]])
        z = reparameterize_z(c_q, codebook, [0.1, 2.0], eps)
        np.testing.assert_allclose(z.value, [[1.1, 1.9], [0.0, 3.0]])

    def test_negative_sigma_rejected(self, codebook):
        with pytest.raises(DomainError):
            reparameterize_z(dc.one_hot(0, 3), codebook, [-1.0], np.zeros((1, 2)))

    def test_soft_codeword_is_mixture(self, codebook):
        mixed = select_codeword([0.5, 0.5, 0.0], codebook)
        np.testing.assert_allclose(mixed.value, [0.5, 1.0])

    def test_sample_latent_uses_selected_variance(self, codebook, rng):
        """z − μ_c = σ_c ε，σ_c 取自所选分量"""
        log_pi = dc.tensor(log_softmax(rng.normal(size=(4, 3)), axis=-1))
        sigma2_c = dc.tensor(rng.uniform(0.5, 2.0, size=(4, 3)))
        noise = LatentNoise.draw(rng, 4, 3, 2)
        sample = sample_latent(log_pi, sigma2_c, codebook, 0.5, noise)
        sigma = np.sqrt(sigma2_c.value[np.arange(4), sample.index])
        np.testing.assert_allclose(sample.codeword.value, codebook.M.value[sample.index])
        np.testing.assert_allclose(sample.z.value - sample.codeword.value, sigma[:, None] * noise.eps, atol=1e-12)

    def test_noise_shapes(self, rng):
        noise = LatentNoise.draw(rng, 5, 7, 3)
        assert noise.gumbel.shape == (5, 7)
        assert noise.eps.shape == (5, 3)

    def test_ste_quantize(self, codebook):
        """前向取最近码字，反向对 ẑ 为恒等"""
        zhat = dc.tensor([[0.9, 2.2], [-0.1, 0.1]], requires_grad=True)
        z_q, index = ste_quantize(zhat, codebook)
        np.testing.assert_array_equal(index, [1, 0])
        np.testing.assert_array_equal(z_q.value, [[1.0, 2.0], [0.0, 0.0]])
        weights = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(dc.backward(dc.sum(dc.mul(z_q, weights)))[zhat], weights)

    def test_deterministic_latent(self, codebook):
        index, z = deterministic_latent(np.array([[0.1, 0.2, 0.7], [0.6, 0.3, 0.1]]), codebook)
        np.testing.assert_array_equal(index, [2, 0])
        np.testing.assert_array_equal(z, [[-1.0, 3.0], [0.0, 0.0]])


class TestTemperatureSchedule:
    """温度退火"""

    def test_endpoints(self):
        schedule = TemperatureSchedule(total_steps=1000)
        assert schedule(0) == pytest.approx(2.0)
        assert schedule(800) == pytest.approx(0.1)
        assert schedule(1000) == pytest.approx(0.1)

    def test_monotone_and_bounded(self):
        schedule = TemperatureSchedule(total_steps=500)
        values = [schedule(t) for t in range(501)]
        assert np.all(np.diff(values) <= 0)
        assert min(values) >= 0.1
        assert max(values) <= 2.0

    def test_exponential_rate(self):
        """τ = 2·exp(−r t)，r = ln(20)/(0.8·T)"""
        schedule = TemperatureSchedule(total_steps=100)
        assert schedule.rate == pytest.approx(np.log(20.0) / 80.0)
        assert schedule(40) == pytest.approx(2.0 * np.exp(-schedule.rate * 40))

    def test_negative_step(self):
        with pytest.raises(DomainError):
            TemperatureSchedule(total_steps=10)(-1)

    def test_zero_steps_keeps_start(self):
        assert TemperatureSchedule(total_steps=0)(0) == 2.0

    def test_function_form(self):
        assert temperature(0, 100) == pytest.approx(2.0)
        assert temperature(90, 100) == pytest.approx(0.1)
