"""Training loop: schedule values, AdamW behavior, loss oracles, convergence
on tiny problems, determinism, and the non-finite abort."""

import json
import math

import numpy as np
import pytest

from patchformer import tensor as T
from patchformer.model import ModelConfig, PatchClassifier
from patchformer.tensor import Graph, Tensor, backward
from patchformer.training import (
    NonFiniteLossError,
    OptimState,
    TrainConfig,
    adamw_step,
    cross_entropy_soft,
    evaluate,
    lr_at,
    train,
)


def tiny_model(seed=0, **overrides):
    base = dict(
        image_size=8, patch_size=4, num_classes=3, channels=1,
        dim=8, heads=2, layers=1, mlp_head_units=(8,), dropout=0.0,
    )
    base.update(overrides)
    return PatchClassifier(ModelConfig(**base), np.random.default_rng(seed))


def tiny_data(n_per_class=4, seed=0):
    # class = which half of the image is bright; survives all the layer norms
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in range(3):
        for _ in range(n_per_class):
            img = np.full((8, 8, 1), 0.2)
            if c == 0:
                img[:, :4] = 0.9
            elif c == 1:
                img[:, 4:] = 0.9
            else:
                img[:4, :] = 0.9
            img += rng.normal(0, 0.03, img.shape)
            xs.append(np.clip(img, 0, 1))
            ys.append(c)
    x = np.stack(xs).astype(np.float32)
    y = np.array(ys, dtype=np.int64)
    return x, y


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=3, warmup_epochs=4)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(schedule="linear")
        with pytest.raises(ValueError):
            TrainConfig(cutmix_alpha=0.0)


class TestSchedule:
    def test_first_epoch_is_lr_over_warmup(self):
        cfg = TrainConfig(lr=0.01, epochs=100, warmup_epochs=5)
        assert lr_at(0, cfg) == pytest.approx(0.01 / 5)

    def test_warmup_end_hits_lr_exactly(self):
        cfg = TrainConfig(lr=0.01, epochs=100, warmup_epochs=5)
        assert lr_at(4, cfg) == pytest.approx(0.01)      # ramp reaches lr
        assert lr_at(5, cfg) == pytest.approx(0.01)      # cosine starts at lr

    def test_final_epoch_nearly_zero(self):
        cfg = TrainConfig(lr=0.01, epochs=100, warmup_epochs=5)
        assert lr_at(99, cfg) <= 0.02 * cfg.lr

    def test_monotone_ramp_then_decay(self):
        cfg = TrainConfig(lr=0.01, epochs=40, warmup_epochs=8)
        values = [lr_at(e, cfg) for e in range(40)]
        for a, b in zip(values[:7], values[1:8]):
            assert b > a
        for a, b in zip(values[8:-1], values[9:]):
            assert b < a

    def test_constant_schedule(self):
        cfg = TrainConfig(lr=0.01, epochs=10, warmup_epochs=2, schedule="constant")
        assert lr_at(0, cfg) == pytest.approx(0.005)
        assert all(lr_at(e, cfg) == 0.01 for e in range(2, 10))

    def test_out_of_range_epoch(self):
        cfg = TrainConfig(epochs=10)
        with pytest.raises(ValueError):
            lr_at(-1, cfg)
        with pytest.raises(ValueError):
            lr_at(10, cfg)


class TestAdamW:
    def test_pure_decay_when_grad_zero(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.01)
        p = Tensor(np.full(4, 2.0), requires_grad=True)
        params = [("p", p)]
        state = OptimState.init(params)
        adamw_step(params, state, lr_t=0.1, cfg=cfg)
        # zero grad leaves the moments at zero, so only the decoupled decay acts
        np.testing.assert_allclose(p.data, 2.0 * (1.0 - 0.1 * 0.01), rtol=1e-12)
        assert state.t == 1

    def test_no_decay_no_grad_is_identity(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.0)
        p = Tensor(np.full(4, 2.0), requires_grad=True)
        params = [("p", p)]
        adamw_step(params, OptimState.init(params), lr_t=0.1, cfg=cfg)
        np.testing.assert_array_equal(p.data, 2.0)

    def test_first_step_approximates_sign_descent(self):
        cfg = TrainConfig(lr=0.05, weight_decay=0.0)
        p = Tensor(np.zeros(5), requires_grad=True)
        p.grad = np.array([3.0, -2.0, 0.5, -0.1, 10.0])
        params = [("p", p)]
        adamw_step(params, OptimState.init(params), lr_t=0.05, cfg=cfg)
        np.testing.assert_allclose(p.data, -0.05 * np.sign(p.grad), rtol=1e-6)

    def test_float32_params_stay_float32(self):
        cfg = TrainConfig(lr=0.01)
        p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        p.grad = np.ones(3, dtype=np.float32)
        params = [("p", p)]
        adamw_step(params, OptimState.init(params), lr_t=0.01, cfg=cfg)
        assert p.data.dtype == np.float32

    def test_descends_convex_bowl(self):
        target = np.array([1.5, -2.0, 0.25])
        w = Tensor(np.zeros(3), requires_grad=True)
        c = Tensor(target)
        params = [("w", w)]
        state = OptimState.init(params)
        cfg = TrainConfig(lr=0.05, weight_decay=0.0)
        for _ in range(400):
            with Graph() as g:
                diff = w - c
                loss = T.mean(diff * diff)
                w.grad = None
                backward(loss, g)
            adamw_step(params, state, lr_t=0.05, cfg=cfg)
        np.testing.assert_allclose(w.data, target, atol=0.05)


class TestCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        logits = Tensor(np.zeros((4, 3)))
        targets = np.eye(3)[[0, 1, 2, 0]]
        loss = cross_entropy_soft(logits, targets)
        assert float(loss.data) == pytest.approx(math.log(3), rel=1e-6)

    def test_confident_correct_is_near_zero(self):
        logits = Tensor(np.array([[20.0, 0.0, 0.0]]))
        loss = cross_entropy_soft(logits, np.array([[1.0, 0.0, 0.0]]))
        assert float(loss.data) < 1e-6

    def test_soft_target_oracle(self):
        rng = np.random.default_rng(0)
        logits_np = rng.normal(size=(5, 4))
        t = rng.random((5, 4))
        t /= t.sum(axis=-1, keepdims=True)
        loss = cross_entropy_soft(Tensor(logits_np), t)
        shifted = logits_np - logits_np.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        want = -(t * logp).sum(axis=-1).mean()
        assert float(loss.data) == pytest.approx(want, rel=1e-5)

    def test_gradient_is_softmax_minus_target_over_batch(self):
        with T.default_dtype(np.float64):
            rng = np.random.default_rng(1)
            logits = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
            t = rng.random((6, 3))
            t /= t.sum(axis=-1, keepdims=True)
            with Graph() as g:
                loss = cross_entropy_soft(logits, t)
                backward(loss, g)
            e = np.exp(logits.data - logits.data.max(-1, keepdims=True))
            sm = e / e.sum(-1, keepdims=True)
            np.testing.assert_allclose(logits.grad, (sm - t) / 6, atol=1e-12)

    def test_bad_targets_rejected(self):
        logits = Tensor(np.zeros((2, 3)))
        with pytest.raises(T.ShapeError):
            cross_entropy_soft(logits, np.eye(3))
        with pytest.raises(ValueError):
            cross_entropy_soft(logits, np.full((2, 3), 0.5))


class TestEvaluate:
    def test_empty_split(self):
        model = tiny_model()
        acc, probs = evaluate(model, np.zeros((0, 8, 8, 1)), np.zeros(0, np.int64))
        assert math.isnan(acc)
        assert probs.shape == (0, 3)

    def test_batching_matches_single_pass(self):
        model = tiny_model(1)
        x, y = tiny_data()
        acc_small, probs_small = evaluate(model, x, y, batch_size=2)
        acc_big, probs_big = evaluate(model, x, y, batch_size=64)
        assert acc_small == acc_big
        np.testing.assert_array_equal(probs_small, probs_big)

    def test_accuracy_one_against_own_argmax(self):
        model = tiny_model(2)
        x, _ = tiny_data()
        _, probs = evaluate(model, x, np.zeros(len(x), np.int64))
        labels = probs.argmax(axis=-1)
        acc, _ = evaluate(model, x, labels)
        assert acc == 1.0


class TestTrainLoop:
    def test_first_epoch_loss_near_log_k(self):
        model = tiny_model(3)
        x, y = tiny_data()
        cfg = TrainConfig(lr=1e-4, epochs=1, warmup_epochs=1, batch_size=64,
                          cutmix=False, seed=0)
        history = train(model, x, y, x[:0], y[:0], cfg)
        assert history[0]["train_loss"] == pytest.approx(math.log(3), abs=0.2)

    def test_memorizes_tiny_separable_set(self):
        model = tiny_model(4, dim=16, mlp_head_units=(16,))
        x, y = tiny_data()
        cfg = TrainConfig(lr=0.01, weight_decay=0.0, epochs=100, warmup_epochs=5,
                          batch_size=12, cutmix=False, seed=1)
        history = train(model, x, y, x, y, cfg)
        assert history[-1]["train_acc"] == 1.0
        assert history[-1]["train_loss"] < history[0]["train_loss"]

    def test_history_and_checkpoints(self, tmp_path):
        model = tiny_model(5)
        x, y = tiny_data()
        cfg = TrainConfig(lr=0.005, epochs=3, warmup_epochs=1, batch_size=6,
                          cutmix=True, seed=2)
        hist_path = tmp_path / "history.jsonl"
        best = tmp_path / "m.ckpt"
        last = tmp_path / "m.last.ckpt"
        history = train(model, x[:9], y[:9], x[9:], y[9:], cfg,
                        history_path=hist_path, best_path=best, last_path=last)
        assert len(history) == 3
        assert best.exists() and last.exists()
        lines = hist_path.read_text().splitlines()
        assert len(lines) == 3
        for i, line in enumerate(lines):
            entry = json.loads(line)
            assert entry["epoch"] == i
            assert set(entry) == {"epoch", "lr", "train_loss", "train_acc", "val_acc"}

    def test_no_val_split_copies_last_to_best(self, tmp_path):
        model = tiny_model(6)
        x, y = tiny_data()
        cfg = TrainConfig(lr=0.005, epochs=2, warmup_epochs=1, batch_size=12,
                          cutmix=False, seed=3)
        best = tmp_path / "best.ckpt"
        last = tmp_path / "last.ckpt"
        history = train(model, x, y, x[:0], y[:0], cfg,
                        best_path=best, last_path=last)
        assert history[-1]["val_acc"] is None
        assert best.read_bytes() == last.read_bytes()

    def test_identical_seeds_identical_runs(self, tmp_path):
        x, y = tiny_data()
        cfg = TrainConfig(lr=0.005, epochs=3, warmup_epochs=1, batch_size=6,
                          cutmix=True, seed=7)
        out = []
        for tag in ("a", "b"):
            model = PatchClassifier(
                ModelConfig(image_size=8, patch_size=4, num_classes=3, channels=1,
                            dim=8, heads=2, layers=1, mlp_head_units=(8,)),
                np.random.default_rng(42),
            )
            hist = tmp_path / f"{tag}.jsonl"
            ckpt = tmp_path / f"{tag}.ckpt"
            train(model, x[:9], y[:9], x[9:], y[9:], cfg,
                  history_path=hist, best_path=None, last_path=ckpt)
            out.append((hist.read_bytes(), ckpt.read_bytes()))
        assert out[0][0] == out[1][0]
        assert out[0][1] == out[1][1]

    def test_non_finite_loss_aborts(self):
        model = tiny_model(8)
        x, y = tiny_data()
        cfg = TrainConfig(lr=0.001, epochs=1, warmup_epochs=1, batch_size=12,
                          cutmix=False, seed=4)
        with np.errstate(all="ignore"), pytest.raises(NonFiniteLossError) as err:
            # 1e308 does not fit in float32, so the projection becomes inf
            # and the first layer norm turns it into NaN
            model.tokenizer.proj_w.data[...] = 1e308
            train(model, x, y, x[:0], y[:0], cfg)
        assert err.value.epoch == 0 and err.value.batch == 0

    def test_empty_train_split_rejected(self):
        model = tiny_model(9)
        x, y = tiny_data()
        with pytest.raises(ValueError):
            train(model, x[:0], y[:0], x, y, TrainConfig(epochs=1, warmup_epochs=1))
