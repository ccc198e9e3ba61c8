"""Training loop: BCE objective, decoupled-decay adaptive optimizer,
linear warm-up plus cosine-annealed learning rate, per-epoch metric log."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import metrics

CLAMP_EPS = 1e-7


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 2e-4
    lr_max: float = 2e-3
    warmup_epochs: int = 10
    total_epochs: int = 260
    weight_decay: float = 5e-3
    batch_size: int = 512
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 2025

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise TrainError("need 0 <= warmup_epochs < total_epochs")
        if self.lr_start <= 0 or self.lr_max <= 0 or self.batch_size < 1:
            raise TrainError("rates and batch size must be positive")


def toy_train_config(**overrides) -> TrainConfig:
    defaults = dict(total_epochs=50, batch_size=64, weight_decay=1e-4)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up to lr_max, then cosine decay to 0 at total_epochs."""
    if epoch <= cfg.warmup_epochs:
        frac = epoch / cfg.warmup_epochs if cfg.warmup_epochs else 1.0
        return cfg.lr_start + frac * (cfg.lr_max - cfg.lr_start)
    progress = (epoch - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


def bce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy with probability clamping at 1e-7.

    `pred` must already be probabilities (sigmoid upstream); `target` must be
    exactly binary.
    """
    if not bool(((target == 0) | (target == 1)).all()):
        raise TrainError("targets must be binary")
    p = pred.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


class DecoupledAdamW(torch.optim.Optimizer):
    """Adam moments plus decoupled weight decay.

    Decay shrinks raw weights directly each step and is not folded into the
    moment estimates nor scaled by the learning rate, so a zero-lr step still
    applies pure decay.
    """

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            beta1, beta2 = group["betas"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["m"] = torch.zeros_like(p)
                    state["v"] = torch.zeros_like(p)
                state["step"] += 1
                t = state["step"]
                m, v = state["m"], state["v"]
                m.mul_(beta1).add_(p.grad, alpha=1 - beta1)
                v.mul_(beta2).addcmul_(p.grad, p.grad, value=1 - beta2)
                m_hat = m / (1 - beta1**t)
                v_hat = v / (1 - beta2**t)
                p.add_(m_hat / (v_hat.sqrt() + group["eps"]), alpha=-group["lr"])
                if group["weight_decay"]:
                    p.add_(p, alpha=-group["weight_decay"])
        return loss


@dataclass
class TrainResult:
    final_state: dict
    best_state: dict
    best_epoch: int
    best_val_auc: float
    log: list[dict] = field(default_factory=list)


def _check_dataset(name, tensors, labels, classes):
    if len(tensors) == 0:
        raise TrainError(f"{name} dataset is empty")
    if tensors.ndim != 3 or labels.ndim != 2:
        raise TrainError(f"{name}: expected (N, L, C) tensors and (N, M) labels")
    if tensors.shape[0] != labels.shape[0]:
        raise TrainError(f"{name}: tensor/label count mismatch")
    if labels.shape[1] != classes:
        raise TrainError(f"{name}: label width {labels.shape[1]} != model classes {classes}")


@torch.no_grad()
def evaluate_model(model, tensors: torch.Tensor, labels: torch.Tensor, batch_size: int = 256, k=None):
    model.eval()
    preds = []
    for i in range(0, len(tensors), batch_size):
        preds.append(model(tensors[i : i + batch_size]))
    pred = torch.cat(preds)
    loss = float(bce_loss(pred, labels))
    result = metrics.evaluate(pred.numpy(), labels.numpy().astype(np.int64), k=k)
    return loss, result


def train(model, train_data, val_data, cfg: TrainConfig, log_hook=None) -> TrainResult:
    """Optimize `model` on (tensors, labels) pairs; deterministic in (seed, data order).

    train_data / val_data: tuples of float32 torch tensors ((N, L, C), (N, M)).
    Emits one log row per (epoch, split) and checkpoints the parameters with
    the best validation AUC.
    """
    x_train, y_train = train_data
    x_val, y_val = val_data
    classes = model.cfg.classes
    _check_dataset("train", x_train, y_train, classes)
    _check_dataset("val", x_val, y_val, classes)

    torch.manual_seed(cfg.seed)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed, spawn_key=(0xE,))))
    opt = DecoupledAdamW(
        model.parameters(),
        lr=lr_at(0, cfg),
        betas=cfg.betas,
        eps=cfg.epsilon,
        weight_decay=cfg.weight_decay,
    )

    log: list[dict] = []
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    best_epoch = -1
    best_auc = -1.0

    def snapshot():
        return {k: v.detach().clone() for k, v in model.state_dict().items()}

    for epoch in range(cfg.total_epochs):
        lr = lr_at(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = shuffle_rng.permutation(len(x_train))
        epoch_loss = 0.0
        n_batches = 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            pred = model(x_train[idx])
            loss = bce_loss(pred, y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        train_loss = epoch_loss / n_batches

        val_loss, val_metrics = evaluate_model(model, x_val, y_val, cfg.batch_size)
        log.append({"epoch": epoch, "split": "train", "loss": train_loss,
                    "auc": "", "p_at_k": "", "map_at_k": ""})
        log.append({"epoch": epoch, "split": "val", "loss": val_loss,
                    "auc": val_metrics.auc, "p_at_k": val_metrics.p_at_k,
                    "map_at_k": val_metrics.map_at_k})
        if log_hook is not None:
            log_hook(log[-2])
            log_hook(log[-1])
        if val_metrics.auc > best_auc:
            best_auc = val_metrics.auc
            best_epoch = epoch
            best_state = snapshot()

    return TrainResult(
        final_state=snapshot(),
        best_state=best_state,
        best_epoch=best_epoch,
        best_val_auc=best_auc,
        log=log,
    )


def split_indices(n: int, ratios=(8, 1, 1), seed: int = 2025) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic train/val/test permutation split (default 8:1:1, seed 2025)."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0x5,))))
    order = rng.permutation(n)
    total = sum(ratios)
    n_train = n * ratios[0] // total
    n_val = n * ratios[1] // total
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]
