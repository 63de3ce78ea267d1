"""模型构建、训练与评估测试"""

from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from gmvq.core import diffcore as dc
from gmvq.core import posterior as post
from gmvq.core.errors import DivergenceError, NonFiniteError
from gmvq.core.networks import build_model
from gmvq.models.training import METRICS_COLUMNS, MetricsRecord, ModelConfig
from gmvq.services.data_service import make_synthetic_dataset
from gmvq.services.quantizers import (
    GMVQQuantizer,
    StochasticVQQuantizer,
    VQVAEQuantizer,
    create_quantizer,
)
from gmvq.services.sweep_service import compare, run_sweep
from gmvq.services.training_service import (
    TrainingService,
    evaluate,
    metrics_to_csv,
    train,
)


class TestModelConfig:
    """超参数校验"""

    def test_defaults(self):
        config = ModelConfig()
        assert (config.input_dim, config.latent_dim, config.codebook_size) == (64, 8, 32)
        assert config.head_width == 16
        assert config.quantizer == "gmvq"

    def test_hidden_sizes_from_string(self):
        config = ModelConfig(encoder_hidden="128, 64", decoder_hidden="32")
        assert config.encoder_hidden == [128, 64]
        assert config.decoder_hidden == [32]

    @pytest.mark.parametrize(
        "overrides",
        [
            {"latent_dim": 0},
            {"codebook_size": 1},
            {"quantizer": "kmeans"},
            {"tau_start": 0.05},
            {"encoder_hidden": [8, -1]},
            {"unknown_key": 1},
            {"init_confidence": 1.0},
            {"codebook_size": 4, "init_confidence": 0.2},
        ],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ValidationError):
            ModelConfig(**overrides)

    def test_full_scale_preset(self):
        config = ModelConfig.full_scale_preset("cifar10")
        assert config.codebook_size == 1024
        assert config.latent_dim == 64
        assert config.learning_rate == 1e-2
        assert ModelConfig.full_scale_preset("celeba", epochs=3).epochs == 3

    def test_metrics_record_bounds(self):
        with pytest.raises(ValidationError):
            MetricsRecord(epoch=0, step=1, mse=0.1, perplexity=0.5, kl=0.0, latent_reg=0.0, tau=1.0, learning_rate=0.1)


class TestBuildModel:
    """模型构建"""

    def test_encoder_head_width(self):
        model = build_model(ModelConfig(input_dim=10, latent_dim=4, codebook_size=3))
        assert model.encoder.sizes[-1] == 8
        assert model.decoder.sizes == [4, 64, 128, 10]

    def test_same_seed_same_parameters(self, small_config):
        a = build_model(small_config).state_dict()
        b = build_model(small_config).state_dict()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_decoder_output_shape(self, small_model, rng):
        out = small_model.decoder(rng.normal(size=(5, 2)))
        assert out.shape == (5, 6)

    def test_parameter_names_unique(self, small_model):
        names = [p.name for p in small_model.parameters()]
        assert len(names) == len(set(names))
        assert "codebook" in names

    def test_float32(self, small_config):
        model = build_model(small_config.model_copy(update={"dtype": "float32"}))
        assert all(p.dtype == np.float32 for p in model.parameters())


class TestQuantizers:
    """量化器选择"""

    @pytest.mark.parametrize(
        "kind,cls",
        [("gmvq", GMVQQuantizer), ("vqvae_ste", VQVAEQuantizer), ("stochastic_vq", StochasticVQQuantizer)],
    )
    def test_create_quantizer(self, small_config, kind, cls):
        model = build_model(small_config.model_copy(update={"quantizer": kind}))
        quantizer = create_quantizer(model)
        assert isinstance(quantizer, cls)
        posterior = quantizer.eval_posterior(dc.tensor(np.zeros((3, 6))))
        assert posterior.shape == (3, 4)
        np.testing.assert_allclose(posterior.sum(axis=-1), 1.0)

    def test_vqvae_ignores_temperature(self, small_config, small_dataset):
        """VQ-VAE 不退火，记录的 τ 恒为 tau_start"""
        assert VQVAEQuantizer.uses_temperature is False
        _, history = train(small_config.model_copy(update={"quantizer": "vqvae_ste", "epochs": 3}), small_dataset)
        assert [r.tau for r in history] == [small_config.tau_start] * 3


class TestTrainingService:
    """训练循环"""

    def test_history_per_epoch(self, small_config, small_dataset):
        model, history = train(small_config, small_dataset)
        assert len(history) == small_config.epochs
        assert [r.epoch for r in history] == [0, 1]
        assert history[-1].step == 2 * 4
        for record in history:
            assert 1.0 <= record.perplexity <= small_config.codebook_size
            assert record.mse >= 0

    @pytest.mark.parametrize("kind", ["gmvq", "vqvae_ste", "stochastic_vq"])
    def test_each_quantizer_trains(self, small_config, small_dataset, kind):
        _, history = train(small_config.model_copy(update={"quantizer": kind}), small_dataset)
        assert len(history) == 2
        assert all(np.isfinite(r.mse) for r in history)

    def test_zero_epochs(self, small_config, small_dataset):
        """0 个 epoch：历史为空，模型即初始化后的模型"""
        service = TrainingService(small_config.model_copy(update={"epochs": 0}))
        initialized = {k: v.copy() for k, v in service.initialize(small_dataset.data).state_dict().items()}
        model, history = service.train(small_dataset)
        assert history == []
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, initialized[name])

    def test_codebook_initialized_by_kmeans(self, small_config, small_dataset):
        service = TrainingService(small_config)
        model = service.initialize(small_dataset.data)
        fresh = build_model(small_config)
        assert not np.array_equal(model.codebook.M.value, fresh.codebook.M.value)

    def test_initial_posterior_is_confident(self, small_config, small_dataset):
        """k-means 之后校准 ŵ：首个 batch 上 max π 的均值等于 init_confidence"""
        service = TrainingService(small_config)
        model = service.initialize(small_dataset.data)
        first = np.random.default_rng([small_config.seed, 1]).permutation(64)[: small_config.batch_size]
        pi = post.posterior_bundle(small_dataset.data[first], model).pi.value
        assert np.mean(np.max(pi, axis=-1)) == pytest.approx(small_config.init_confidence, rel=1e-6)

    def test_baselines_keep_default_precision_head(self, small_config, small_dataset):
        config = small_config.model_copy(update={"quantizer": "vqvae_ste"})
        model = TrainingService(config).initialize(small_dataset.data)
        fresh = build_model(config)
        np.testing.assert_array_equal(model.encoder.layers[-1].bias.value, fresh.encoder.layers[-1].bias.value)

    def test_assignments_stay_confident_and_codebook_keeps_spread(self, small_config, small_dataset):
        """训练后分配仍有置信度，码本没有缩成一个点"""
        service = TrainingService(small_config.model_copy(update={"epochs": 20}))
        model, _ = service.train(small_dataset)
        bundle = post.posterior_bundle(small_dataset.data, model)
        assert np.mean(np.max(bundle.pi.value, axis=-1)) > 0.5
        codebook_spread = np.linalg.norm(model.codebook.M.value.std(axis=0))
        zhat_spread = np.linalg.norm(bundle.zhat.value.std(axis=0))
        assert codebook_spread > 0.25 * zhat_spread
        assert evaluate(model, small_dataset).codes_used >= 3

    def test_bit_identical_metrics(self, small_config, small_dataset):
        """相同配置与 seed 得到逐字节相同的 metrics.csv"""
        _, first = train(small_config, small_dataset)
        _, second = train(small_config, small_dataset)
        assert metrics_to_csv(first) == metrics_to_csv(second)

    def test_metrics_csv_header(self, small_config, small_dataset):
        _, history = train(small_config, small_dataset)
        lines = metrics_to_csv(history).splitlines()
        assert lines[0] == ",".join(METRICS_COLUMNS)
        assert len(lines) == 1 + len(history)

    def test_learning_rate_and_temperature_recorded(self, small_config, small_dataset):
        _, history = train(small_config.model_copy(update={"epochs": 5}), small_dataset)
        taus = [r.tau for r in history]
        assert taus == sorted(taus, reverse=True)
        assert history[-1].tau == pytest.approx(small_config.tau_end)
        assert history[-1].learning_rate < small_config.learning_rate

    def test_divergence_keeps_last_good_state(self, small_config, small_dataset):
        """非有限损失中止训练并携带最近的良好状态"""
        with patch.object(GMVQQuantizer, "compute_loss", side_effect=NonFiniteError("loss 为 NaN")):
            service = TrainingService(small_config)
            with pytest.raises(DivergenceError) as excinfo:
                service.train(small_dataset)
        assert excinfo.value.step == 0
        assert "codebook" in excinfo.value.last_good_state

    def test_save_writes_outputs(self, small_config, small_dataset, tmp_path):
        service = TrainingService(small_config)
        service.train(small_dataset)
        metrics_path, checkpoint_path = service.save(tmp_path / "run")
        assert metrics_path.read_text().startswith("epoch,step,mse")
        assert checkpoint_path.read_bytes()[:4] == b"GMVQ"


class TestEvaluate:
    """确定性评估"""

    def test_evaluate_is_pure_and_repeatable(self, small_config, small_dataset):
        model, _ = train(small_config, small_dataset)
        before = model.state_dict()
        first = evaluate(model, small_dataset)
        second = evaluate(model, small_dataset)
        assert first == second
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_decodes_argmax_codeword(self, small_model, small_dataset):
        """重建来自 argmax 分量的码字 μ_c，而不是 π 加权的混合"""
        pi = post.posterior_bundle(small_dataset.data, small_model).pi.value
        index = np.argmax(pi, axis=-1)
        recon = small_model.decoder(small_model.codebook.M.value[index]).value
        result = evaluate(small_model, small_dataset)
        assert result.mse == pytest.approx(np.mean((small_dataset.data - recon) ** 2), rel=1e-9)
        assert result.codes_used == len(np.unique(index))

    def test_collapsed_model_has_unit_perplexity(self, small_config, small_dataset):
        """只用一个码字的模型困惑度为 1"""
        model = build_model(small_config.model_copy(update={"quantizer": "vqvae_ste"}))
        collapsed = np.full((4, 2), 1e3)
        collapsed[0] = 0.0
        model.codebook.M.assign(collapsed)
        result = evaluate(model, small_dataset)
        assert result.perplexity == pytest.approx(1.0)
        assert result.codes_used == 1

    def test_batch_size_does_not_change_mse(self, small_model, small_dataset):
        a = evaluate(small_model, small_dataset, batch_size=8)
        b = evaluate(small_model, small_dataset, batch_size=64)
        assert a.mse == pytest.approx(b.mse, rel=1e-12)
        assert a.codes_used == b.codes_used


@pytest.mark.slow
class TestDeskScaleTrends:
    """桌面规模的方向性结论"""

    @pytest.fixture(scope="class")
    def clusters(self):
        return make_synthetic_dataset(16, 64, 4096, spread=0.1, seed=7)

    def test_gmvq_uses_more_codes_than_vqvae(self, clusters):
        """同预算下每个 seed：GM-VQ 困惑度至少为 STE VQ-VAE 的 2 倍，MSE 不超过其 1.2 倍"""
        config = ModelConfig(input_dim=64, codebook_size=32, epochs=50, gamma=1.0)
        results = compare(config, clusters, seeds=(0, 1, 2))
        assert len(results) == 3
        for result in results:
            assert result.perplexity_ratio >= 2.0, result.seed
            assert result.mse_ratio <= 1.2, result.seed

    def test_beta_increases_perplexity(self, clusters, tmp_path):
        """固定 γ 时每个 seed 的 Spearman ρ(β, 困惑度) > 0"""
        config = ModelConfig(input_dim=64, codebook_size=32, epochs=50)
        summary = run_sweep(config, clusters, tmp_path, betas=(0.5, 1.0, 2.0, 4.0), gammas=(1.0,), seeds=(0, 1, 2))
        assert [t.seed for t in summary.trends] == [0, 1, 2]
        for trend in summary.trends:
            assert trend.rho_perplexity is not None and trend.rho_perplexity > 0, trend.seed
