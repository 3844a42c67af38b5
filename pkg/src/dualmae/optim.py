"""AdamW with decoupled weight decay, and the cosine epoch schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Schedule", "cosine_lr", "adamw_step", "AdamW"]


@dataclass(frozen=True)
class Schedule:
    """Cosine decay endpoints, stepped per epoch."""

    lr_max: float = 1.0e-3
    lr_min: float = 1.0e-6
    total_epochs: int = 40

    def __post_init__(self):
        if self.lr_min > self.lr_max:
            raise ValueError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def cosine_lr(epoch: int, sched: Schedule) -> float:
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / total)) / 2."""
    if not 0 <= epoch <= sched.total_epochs:
        raise ValueError(
            f"epoch {epoch} outside schedule range [0, {sched.total_epochs}]"
        )
    span = sched.lr_max - sched.lr_min
    return sched.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * epoch / sched.total_epochs))


def adamw_step(param, grad, m, v, step, lr, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0):
    """One in-place AdamW update on raw arrays.

    `step` is the 1-based update count used for bias correction; weight decay
    is decoupled (applied to the parameter directly, not through the moments).
    """
    if m.shape != param.shape or v.shape != param.shape:
        raise ValueError(
            f"optimizer state shape {m.shape}/{v.shape} does not match parameter {param.shape}"
        )
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    b1, b2 = betas
    if weight_decay:
        param -= lr * weight_decay * param
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1**step)
    vhat = v / (1.0 - b2**step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class AdamW:
    """Holds per-parameter moment buffers keyed by parameter name.

    Parameters whose .grad is None at step() are skipped entirely (no decay,
    no moment update), so unused heads stay untouched during a stage.
    """

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.05):
        self.named_params = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        for name, p in self.named_params:
            if p.grad is None:
                continue
            adamw_step(p.data, p.grad, self.m[name], self.v[name],
                       self.step_count, lr, self.betas, self.eps,
                       self.weight_decay)

    # checkpoint support: moments exposed as a flat name->array table
    def state_tables(self):
        out = {"step": np.asarray([float(self.step_count)], dtype=np.float32)}
        for name in self.m:
            out[name + ".m"] = self.m[name]
            out[name + ".v"] = self.v[name]
        return out

    def load_state_tables(self, tables):
        self.step_count = int(tables["step"][0])
        for name in self.m:
            m, v = tables[name + ".m"], tables[name + ".v"]
            if m.shape != self.m[name].shape:
                raise ValueError(f"optimizer state shape mismatch for {name}")
            self.m[name] = m.astype(np.float32).reshape(self.m[name].shape)
            self.v[name] = v.astype(np.float32).reshape(self.v[name].shape)
