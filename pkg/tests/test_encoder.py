"""Toy encoder: geometry, extraction identities, gradients, fine-tuning."""

import numpy as np
import pytest

from cellsift import encoder
from cellsift.encoder import (
    EncoderConfig,
    ReduceOnPlateau,
    extract_tokens,
    fine_tune,
    forward,
    init_encoder,
    load_state,
    save_state,
)
from cellsift.synthetic import toy_image_dataset
from cellsift.tensors import ExtractionMode

SMALL = EncoderConfig(image_size=8, patch_size=4, embed_dim=8, depth=2, heads=2)


def _random_state(config, seed, scale=0.3):
    state = init_encoder(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for k in state.params:
        state.params[k] = rng.standard_normal(state.params[k].shape) * scale
    return state


class TestForward:
    def test_geometry_default_config(self):
        config = EncoderConfig()  # 28x28, patch 7
        assert config.num_patches == 16
        state = init_encoder(config, seed=0)
        image = np.random.default_rng(0).standard_normal((28, 28, 1))
        cls, img, logits = forward(state, image)
        assert cls.shape == (32,)
        assert img.shape == (16, 32)
        assert logits.shape == (3,)

    def test_zero_weights_uniform_softmax(self):
        state = init_encoder(SMALL, seed=0)
        for k in state.params:
            state.params[k] = np.zeros_like(state.params[k])
        # LayerNorm gammas stay zero too; logits are exactly the head bias.
        image = np.random.default_rng(1).standard_normal((8, 8, 1))
        _, _, logits = forward(state, image)
        assert np.array_equal(logits, np.zeros(3))

    def test_attention_rows_sum_to_one(self):
        state = _random_state(SMALL, 7)
        images = np.random.default_rng(2).standard_normal((3, 8, 8, 1))
        out, _ = encoder._forward_batch(state, images)
        for probs in out["attn_probs"]:
            sums = probs.sum(axis=-1)
            assert np.abs(sums - 1.0).max() < 1e-12

    def test_deterministic(self):
        state = _random_state(SMALL, 3)
        image = np.random.default_rng(4).standard_normal((8, 8, 1))
        a = forward(state, image)
        b = forward(state, image)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_dimension_mismatch_rejected(self):
        state = init_encoder(SMALL, seed=0)
        with pytest.raises(ValueError, match="does not match config"):
            forward(state, np.zeros((10, 10, 1)))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(image_size=10, patch_size=4)
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(embed_dim=10, heads=4)


class TestExtraction:
    def test_shapes_and_slicing_identities(self):
        state = _random_state(SMALL, 11)
        images = np.random.default_rng(5).standard_normal((5, 8, 8, 1))
        all_t = extract_tokens(state, images, ExtractionMode.ALL_TOKENS)
        cls_t = extract_tokens(state, images, ExtractionMode.CLASS_TOKEN)
        img_t = extract_tokens(state, images, ExtractionMode.IMAGE_TOKENS)
        p = SMALL.num_patches
        assert all_t.data.shape == (5, p + 1, 8)
        assert cls_t.data.shape == (5, 1, 8)
        assert img_t.data.shape == (5, p, 8)
        assert np.array_equal(all_t.data[:, :1, :], cls_t.data)
        assert np.array_equal(all_t.data[:, 1:, :], img_t.data)


class TestGradients:
    def test_gradients_match_finite_differences(self):
        state = _random_state(SMALL, 13)
        rng = np.random.default_rng(6)
        images = rng.standard_normal((3, 8, 8, 1))
        labels = np.array([0, 1, 2])
        weights = np.array([1.0, 1.7, 8.7])
        loss, grads = encoder.loss_and_gradients(state, images, labels, weights)
        assert np.isfinite(loss)
        h = 1e-5
        for key in sorted(state.params):
            flat = state.params[key].reshape(-1)
            g = grads[key].reshape(-1)
            for i in rng.choice(flat.size, size=min(2, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + h
                lp = encoder.batch_loss(state, images, labels, weights)
                flat[i] = orig - h
                lm = encoder.batch_loss(state, images, labels, weights)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-8)
                assert rel < 1e-4, f"{key}[{i}]: analytic {g[i]} vs fd {fd}"


class TestFineTune:
    def test_zero_epochs_noop(self):
        state = init_encoder(SMALL, seed=0)
        images, labels = toy_image_dataset((2, 2, 2), 8, seed=0)
        report = fine_tune(state, images, labels, epochs=0)
        assert report.history == []
        for k in state.params:
            assert np.array_equal(report.state.params[k], state.params[k])

    def test_loss_decreases_on_separable_images(self):
        images, labels = toy_image_dataset((8, 8, 8), 8, seed=1)
        state = init_encoder(SMALL, seed=1)
        report = fine_tune(state, images, labels, epochs=20,
                           learning_rate=1e-3, seed=1)
        assert report.history[-1] < report.history[0]
        assert len(report.history) == 20

    def test_non_finite_loss_aborts_with_epoch(self):
        images, labels = toy_image_dataset((2, 2, 2), 8, seed=2)
        state = init_encoder(SMALL, seed=2)
        state.params["head_b"] = np.array([1e308, -1e308, 0.0])
        with np.errstate(over="ignore"), pytest.raises(RuntimeError, match="epoch 0"):
            fine_tune(state, images, labels, epochs=1)

    def test_best_checkpoint_selected(self):
        images, labels = toy_image_dataset((6, 6, 6), 8, seed=3)
        state = init_encoder(SMALL, seed=3)
        report = fine_tune(state, images, labels, epochs=8,
                           learning_rate=1e-3, seed=3)
        assert report.best_epoch == int(np.argmin(report.history))


class TestScheduler:
    def test_three_flat_epochs_halve_once(self):
        sched = ReduceOnPlateau(1e-3, patience=2, factor=0.5)
        sched.update(1.0)  # first value improves over +inf
        sched.update(1.0)
        sched.update(1.0)
        assert sched.lr == 1e-3
        sched.update(1.0)  # third consecutive non-improving epoch
        assert sched.lr == 5e-4
        sched.update(1.0)  # streak was reset; no second halving yet
        assert sched.lr == 5e-4

    def test_improvement_resets_streak(self):
        sched = ReduceOnPlateau(1.0, patience=2, factor=0.5)
        for metric in (1.0, 1.1, 1.1, 0.5, 0.6, 0.6):
            sched.update(metric)
        assert sched.lr == 1.0

    def test_fine_tune_lr_history_follows_plateau_rule(self):
        images, labels = toy_image_dataset((5, 5, 5), 8, seed=4)
        state = init_encoder(SMALL, seed=4)
        report = fine_tune(state, images, labels, epochs=15,
                           learning_rate=5e-2, seed=4)
        # replay the recorded loss series through a fresh scheduler
        sched = ReduceOnPlateau(5e-2, patience=2, factor=0.5)
        expected = []
        for metric in report.history:
            expected.append(sched.lr)
            sched.update(metric)
        assert report.lr_history == expected


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        state = _random_state(SMALL, 17)
        save_state(state, tmp_path / "enc")
        loaded = load_state(tmp_path / "enc")
        assert loaded.config == state.config
        for k, v in state.params.items():
            # storage is float32; loading reproduces the quantized values
            assert np.array_equal(loaded.params[k], v.astype(np.float32).astype(np.float64))

    def test_save_is_idempotent_after_quantization(self, tmp_path):
        state = _random_state(SMALL, 19)
        save_state(state, tmp_path / "a")
        first = load_state(tmp_path / "a")
        save_state(first, tmp_path / "b")
        second = load_state(tmp_path / "b")
        for k in state.params:
            assert np.array_equal(first.params[k], second.params[k])
