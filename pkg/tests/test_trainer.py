import math

import numpy as np
import pytest
import torch

from demux.model import build_model, toy_config
from demux.trainer import (
    CLAMP_EPS,
    DecoupledAdamW,
    TrainConfig,
    TrainError,
    bce_loss,
    evaluate_model,
    lr_at,
    split_indices,
    toy_train_config,
    train,
)


class TestLrSchedule:
    def test_endpoints(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == pytest.approx(2e-4)
        assert lr_at(10, cfg) == pytest.approx(2e-3)
        assert lr_at(260, cfg) == pytest.approx(0.0, abs=1e-12)

    def test_warmup_linear(self):
        cfg = TrainConfig()
        assert lr_at(5, cfg) == pytest.approx(2e-4 + 0.5 * (2e-3 - 2e-4))

    def test_cosine_midpoint(self):
        cfg = TrainConfig()
        mid = (10 + 260) // 2
        assert lr_at(mid, cfg) == pytest.approx(2e-3 * 0.5)

    def test_closed_form_oracle(self):
        cfg = TrainConfig(lr_start=1e-4, lr_max=1e-2, warmup_epochs=4, total_epochs=20)
        for e in range(21):
            if e <= 4:
                expect = 1e-4 + (e / 4) * (1e-2 - 1e-4)
            else:
                expect = 1e-2 * 0.5 * (1 + math.cos(math.pi * (e - 4) / 16))
            assert lr_at(e, cfg) == pytest.approx(expect)

    def test_monotone_shape(self):
        cfg = TrainConfig()
        vals = [lr_at(e, cfg) for e in range(261)]
        assert vals[:11] == sorted(vals[:11])
        assert vals[10:] == sorted(vals[10:], reverse=True)


class TestBceLoss:
    def test_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0.01, 0.99, size=(4, 5))
        y = rng.integers(0, 2, size=(4, 5)).astype(np.float64)
        expect = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        got = float(bce_loss(torch.tensor(p), torch.tensor(y)))
        assert got == pytest.approx(expect, rel=1e-12)

    def test_clamp_keeps_loss_finite(self):
        p = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        y = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
        loss = float(bce_loss(p, y))
        assert math.isfinite(loss)
        assert loss == pytest.approx(-math.log(CLAMP_EPS), rel=1e-3)

    def test_non_binary_targets_rejected(self):
        with pytest.raises(TrainError):
            bce_loss(torch.tensor([0.5]), torch.tensor([0.3]))


class TestDecoupledAdamW:
    def test_zero_lr_pure_decay(self):
        """One step at lr=0: parameters change by weight decay alone."""
        p = torch.nn.Parameter(torch.tensor([2.0, -3.0]))
        opt = DecoupledAdamW([p], lr=0.0, weight_decay=0.01)
        p.grad = torch.tensor([1.0, 1.0])
        before = p.detach().clone()
        opt.step()
        assert torch.allclose(p.detach(), before * (1 - 0.01), atol=1e-12)

    def test_single_step_scalar_oracle(self):
        """Hand-computed Adam update with bias correction plus decoupled decay."""
        w0, g, lr, wd = 1.5, 0.25, 0.1, 0.01
        b1, b2, eps = 0.9, 0.999, 1e-8
        p = torch.nn.Parameter(torch.tensor([w0], dtype=torch.float64))
        opt = DecoupledAdamW([p], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
        p.grad = torch.tensor([g], dtype=torch.float64)
        opt.step()
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        expect = w0 - lr * m_hat / (math.sqrt(v_hat) + eps)
        expect -= wd * expect
        assert p.item() == pytest.approx(expect, rel=1e-12)

    def test_two_step_moment_oracle(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        grads = [0.3, -0.7]
        p = torch.nn.Parameter(torch.tensor([0.0], dtype=torch.float64))
        opt = DecoupledAdamW([p], lr=lr, betas=(b1, b2), eps=eps)
        w = 0.0
        m = v = 0.0
        for t, g in enumerate(grads, start=1):
            p.grad = torch.tensor([g], dtype=torch.float64)
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert p.item() == pytest.approx(w, rel=1e-12)


def toy_dataset(n=48, classes=3, length=24, seed=0):
    """Separable synthetic set: class bit j flips the sign of channel j."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, length, 8)).astype(np.float32) * 0.1
    y = np.zeros((n, classes), dtype=np.float32)
    for i in range(n):
        bits = rng.choice(classes, size=2, replace=False)
        y[i, bits] = 1.0
        for j in bits:
            x[i, :, j] += 1.0
    return torch.tensor(x), torch.tensor(y)


class TestTrain:
    def test_deterministic_one_step(self):
        cfg = toy_train_config(total_epochs=1, warmup_epochs=0, batch_size=16)
        data = toy_dataset()
        states = []
        for _ in range(2):
            model = build_model(toy_config(classes=3), seed=7)
            r = train(model, data, data, cfg)
            states.append(r.final_state)
        for k in states[0]:
            assert torch.equal(states[0][k], states[1][k]), k

    def test_loss_decreases_and_best_tracked(self):
        cfg = toy_train_config(total_epochs=6, warmup_epochs=2, batch_size=16)
        model = build_model(toy_config(classes=3), seed=1)
        x, y = toy_dataset()
        r = train(model, (x, y), (x, y), cfg)
        train_losses = [row["loss"] for row in r.log if row["split"] == "train"]
        assert train_losses[-1] < train_losses[0]
        assert 0 <= r.best_epoch < 6
        val_aucs = [row["auc"] for row in r.log if row["split"] == "val"]
        assert r.best_val_auc == max(val_aucs)

    def test_log_schema_and_hook(self):
        cfg = toy_train_config(total_epochs=2, warmup_epochs=0, batch_size=16)
        model = build_model(toy_config(classes=3), seed=1)
        x, y = toy_dataset()
        seen = []
        r = train(model, (x, y), (x, y), cfg, log_hook=seen.append)
        assert len(r.log) == 4  # 2 epochs x (train, val)
        assert seen == r.log
        for row in r.log:
            assert set(row) == {"epoch", "split", "loss", "auc", "p_at_k", "map_at_k"}

    def test_shape_validation(self):
        cfg = toy_train_config(total_epochs=1, warmup_epochs=0)
        model = build_model(toy_config(classes=3), seed=1)
        x, y = toy_dataset(classes=4)
        with pytest.raises(TrainError):
            train(model, (x, y), (x, y), cfg)

    def test_config_validation(self):
        with pytest.raises(TrainError):
            TrainConfig(warmup_epochs=10, total_epochs=10)
        with pytest.raises(TrainError):
            TrainConfig(batch_size=0)


def test_evaluate_model_consistency():
    model = build_model(toy_config(classes=3), seed=2).eval()
    x, y = toy_dataset(n=20)
    loss, result = evaluate_model(model, x, y)
    with torch.no_grad():
        pred = model(x)
    assert loss == pytest.approx(float(bce_loss(pred, y)))
    assert 0.0 <= result.auc <= 1.0


class TestSplitIndices:
    def test_partition(self):
        tr, va, te = split_indices(100)
        assert len(tr) == 80 and len(va) == 10 and len(te) == 10
        assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(100))

    def test_deterministic(self):
        a = split_indices(57, seed=2025)
        b = split_indices(57, seed=2025)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)
        c = split_indices(57, seed=1)
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))
