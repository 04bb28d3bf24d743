"""Verification of loss functions and the meta-training loop."""

import json
import math

import numpy as np
import pytest

from protorefine.autodiff import ParamSet, Tensor, softmax
from protorefine.bench import EvalProtocol, evaluate
from protorefine.episodes import SyntheticDatasetSpec, make_synthetic, sample_episode
from protorefine.model import Model, ModelConfig
from protorefine.train import (LossReport, TrainConfig, TrainingDiverged,
                               TrainResult, classification_loss, episode_loss,
                               generator_loss, meta_train, onehot)

from conftest import check_gradients


def small_model(weighting="mi", iterations=2, seed=0, feature_dim=8):
    cfg = ModelConfig(mode="feature", feature_dim=feature_dim,
                      encoder="identity", temp_hidden=(16, 8),
                      weighting=weighting, attention_dim=16,
                      attention_heads=4, iterations=iterations,
                      pipeline=("FN", "FM"), init_seed=seed)
    return Model(cfg)


@pytest.fixture(scope="module")
def dataset():
    return make_synthetic(SyntheticDatasetSpec(
        num_classes=16, instances_per_class=40, feature_dim=8,
        within_class_sigma=0.6, split_fractions=(0.5, 0.25, 0.25), seed=21))


class TestOnehot:
    def test_first_position(self):
        np.testing.assert_array_equal(onehot(1, 3), [1.0, 0.0, 0.0])

    def test_last_position(self):
        np.testing.assert_array_equal(onehot(3, 3), [0.0, 0.0, 1.0])

    def test_sum_over_all_positions(self):
        total = sum(onehot(i, 4) for i in range(1, 5))
        np.testing.assert_array_equal(total, np.ones(4))

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="index"):
            onehot(0, 3)
        with pytest.raises(ValueError, match="index"):
            onehot(4, 3)


class TestClassificationLoss:
    def test_perfect_onehot_is_zero(self):
        scores = Tensor(np.eye(4)[[2, 0, 1]])
        labels = np.array([2, 0, 1])
        assert float(classification_loss(scores, labels).data) == 0.0

    def test_uniform_is_log_n(self):
        scores = Tensor(np.full((6, 5), 0.2))
        labels = np.zeros(6, dtype=int)
        got = float(classification_loss(scores, labels).data)
        np.testing.assert_allclose(got, np.log(5.0), atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        logits = rng.normal(size=(7, 4))
        scores = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, size=7)
        got = float(classification_loss(Tensor(scores), labels).data)
        acc = 0.0
        for j in range(7):
            acc += -np.log(scores[j, labels[j]])
        np.testing.assert_allclose(got, acc / 7.0, atol=1e-12)

    def test_label_out_of_range(self, rng):
        scores = Tensor(rng.dirichlet(np.ones(3), size=4))
        with pytest.raises(ValueError, match="labels"):
            classification_loss(scores, np.array([0, 1, 2, 3]))
        with pytest.raises(ValueError, match="labels"):
            classification_loss(scores, np.array([0, 1, -1, 2]))

    def test_shape_validation(self, rng):
        with pytest.raises(ValueError, match="scores"):
            classification_loss(Tensor(rng.dirichlet(np.ones(3))), np.array([0]))

    def test_gradient(self, rng):
        params = ParamSet()
        logits = params.add("logits", rng.normal(size=(5, 3)))
        labels = rng.integers(0, 3, size=5)

        def loss_fn():
            return classification_loss(softmax(logits, axis=1), labels)

        check_gradients(params, loss_fn, n_points=15, rng=rng, tol=1e-4)


class TestGeneratorLoss:
    def test_exact_onehot_near_zero(self):
        labels = np.array([0, 1, 2])
        weights = Tensor(np.eye(3)[labels])
        assert float(generator_loss(weights, labels).data) < 1e-5

    def test_uniform_half_is_log_two(self):
        weights = Tensor(np.full((4, 5), 0.5))
        labels = np.array([0, 1, 2, 3])
        got = float(generator_loss(weights, labels).data)
        np.testing.assert_allclose(got, np.log(2.0), atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        weights = rng.uniform(0.0, 1.0, size=(6, 4))
        labels = rng.integers(0, 4, size=6)
        got = float(generator_loss(Tensor(weights), labels).data)
        acc = 0.0
        for j in range(6):
            for i in range(4):
                w = min(max(weights[j, i], 1e-7), 1.0 - 1e-7)
                t = 1.0 if labels[j] == i else 0.0
                acc += -(t * np.log(w) + (1.0 - t) * np.log(1.0 - w))
        np.testing.assert_allclose(got, acc / 24.0, atol=1e-12)

    def test_extreme_weights_clamped_finite(self):
        weights = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
        labels = np.array([1, 0])
        got = float(generator_loss(weights, labels).data)
        assert math.isfinite(got) and got < 1e-5

    def test_label_out_of_range(self, rng):
        weights = Tensor(rng.uniform(size=(3, 2)))
        with pytest.raises(ValueError, match="labels"):
            generator_loss(weights, np.array([0, 1, 2]))

    def test_gradient(self, rng):
        params = ParamSet()
        raw = params.add("raw", rng.normal(size=(4, 3)))
        labels = np.array([0, 1, 2, 0])

        def loss_fn():
            return generator_loss(raw.sigmoid(), labels)

        check_gradients(params, loss_fn, n_points=12, rng=rng, tol=1e-4)


class TestEpisodeLoss:
    def test_report_identity(self, dataset):
        episode = sample_episode(dataset, "train", 3, 2, 9, seed=4)
        model = small_model()
        lam = 0.5
        total, report = episode_loss(model, episode, lam)
        assert abs(report.total - float(total.data)) == 0.0
        assert abs(report.total - (report.classification
                                   + lam * report.regularization)) <= 1e-10
        assert report.classification >= 0.0 and report.regularization >= 0.0

    def test_lambda_zero_reduces_to_classification(self, dataset):
        episode = sample_episode(dataset, "train", 3, 2, 9, seed=4)
        model = small_model()
        total, report = episode_loss(model, episode, lam=0.0)
        assert report.total == report.classification
        assert report.regularization == 0.0

    def test_negative_lambda_rejected(self, dataset):
        episode = sample_episode(dataset, "train", 3, 2, 9, seed=4)
        with pytest.raises(ValueError, match="lam"):
            episode_loss(small_model(), episode, lam=-0.1)

    def test_score_weighting_variant_supported(self, dataset):
        episode = sample_episode(dataset, "train", 3, 2, 9, seed=4)
        model = small_model(weighting="scores")
        total, report = episode_loss(model, episode, lam=0.5)
        assert math.isfinite(report.total)
        assert report.regularization > 0.0


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="episodes"):
            TrainConfig(episodes=-1)
        with pytest.raises(ValueError, match="lam"):
            TrainConfig(lam=-0.5)
        with pytest.raises(ValueError, match="learning"):
            TrainConfig(lr=-1e-3)
        with pytest.raises(ValueError, match="momentum"):
            TrainConfig(momentum=1.0)
        with pytest.raises(ValueError, match="val_interval"):
            TrainConfig(val_interval=0)


class TestMetaTrain:
    def quick_cfg(self, **kw):
        base = dict(episodes=6, n_way=3, k_shot=1, n_query=6,
                    val_interval=3, val_episodes=4, val_seed=77,
                    log_interval=1)
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_rates_leave_parameters_unchanged(self, dataset):
        model = small_model()
        before = model.params.state_values()
        meta_train(model, dataset, self.quick_cfg(lr=0.0, encoder_lr=0.0), seed=0)
        after = model.params.state_values()
        for name, value in before.items():
            np.testing.assert_array_equal(after[name], value)

    def test_deterministic_loss_trajectory(self, dataset):
        rows = []
        for _ in range(2):
            model = small_model(seed=3)
            result = meta_train(model, dataset, self.quick_cfg(), seed=9)
            rows.append([(r["episode"], r["total"], r["classification"],
                          r["regularization"]) for r in result.history])
        assert rows[0] == rows[1]

    @pytest.mark.filterwarnings("ignore:invalid value")
    def test_divergence_aborts_with_diagnostic(self, dataset):
        model = small_model()
        model.params["temperature.l1.w"].data[0, 0] = np.nan
        with pytest.raises(TrainingDiverged, match="episode 0"):
            meta_train(model, dataset, self.quick_cfg(), seed=0)

    def test_log_file_is_line_delimited_json(self, dataset, tmp_path):
        model = small_model()
        path = tmp_path / "train.ldjson"
        result = meta_train(model, dataset, self.quick_cfg(), seed=1,
                            log_path=path)
        lines = path.read_text().strip().split("\n")
        assert len(lines) == len(result.history) == 6
        for line in lines:
            row = json.loads(line)
            assert set(row) == {"episode", "total", "classification",
                                "regularization", "val_accuracy", "elapsed_s"}
        # validation ran at episodes 2 and 5 (interval 3, plus final)
        val_rows = [json.loads(l) for l in lines if json.loads(l)["val_accuracy"] is not None]
        assert [r["episode"] for r in val_rows] == [2, 5]

    def test_best_checkpoint_restored_and_reproducible(self, dataset):
        model = small_model(seed=2)
        cfg = self.quick_cfg(episodes=8, val_interval=2)
        result = meta_train(model, dataset, cfg, seed=5)
        protocol = EvalProtocol(n_way=3, k_shot=1, n_query=6)
        report = evaluate(model, dataset, "val", protocol,
                          episodes=cfg.val_episodes, seed=cfg.val_seed)
        assert report.accuracy == result.final_val_accuracy
        assert result.best_val_accuracy == result.final_val_accuracy
        assert result.best_episode in (1, 3, 5, 7)

    def test_zero_episode_run_scores_initial_parameters(self, dataset):
        model = small_model()
        result = meta_train(model, dataset, self.quick_cfg(episodes=0), seed=0)
        assert result.episodes_run == 0
        assert result.history == []
        assert result.final_val_accuracy > 0.0

    def test_training_improves_easy_benchmark(self):
        # frozen configuration with a comfortable verified margin
        ds = make_synthetic(SyntheticDatasetSpec(
            num_classes=30, instances_per_class=50, feature_dim=8,
            within_class_sigma=0.9, seed=11))
        model = Model(ModelConfig(feature_dim=8, temp_hidden=(32, 16),
                                  attention_dim=16, attention_heads=4,
                                  iterations=2, init_seed=0))
        protocol = EvalProtocol(n_way=5, k_shot=1, n_query=10)
        before = evaluate(model, ds, "val", protocol, episodes=60, seed=999)
        cfg = TrainConfig(episodes=200, n_way=5, k_shot=1, n_query=10,
                          lr=0.03, val_interval=100, val_episodes=60,
                          val_seed=999)
        result = meta_train(model, ds, cfg, seed=0)
        assert result.final_val_accuracy > before.accuracy
