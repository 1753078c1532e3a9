"""AdamW with per-group learning rates, global-norm clipping and step decay."""

from __future__ import annotations

import math

import numpy as np


class AdamW:
    """Decoupled weight decay Adam over named parameter groups.

    ``groups`` maps a group name to ``(params, lr)``.  Parameters whose grad is
    None are skipped for that step.
    """

    def __init__(self, groups: dict, weight_decay: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.groups = {name: (list(params), lr) for name, (params, lr) in groups.items()}
        self.base_lr = {name: lr for name, (_, lr) in self.groups.items()}
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}

    def parameters(self):
        for params, _ in self.groups.values():
            yield from params

    def set_lr_factor(self, factor: float) -> None:
        self.groups = {k: (p, self.base_lr[k] * factor) for k, (p, _) in self.groups.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for params, lr in self.groups.values():
            for p in params:
                if p.grad is None:
                    continue
                key = id(p)
                g = p.grad
                if key not in self.m:
                    self.m[key] = np.zeros_like(p.data)
                    self.v[key] = np.zeros_like(p.data)
                m, v = self.m[key], self.v[key]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * (g * g)
                p.data *= 1 - lr * self.weight_decay
                p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


def step_decay(step: int, total_steps: int, epochs: int, drops, factor: float = 0.1) -> float:
    """LR multiplier: ``factor`` per drop epoch passed, drops placed proportionally."""
    if total_steps <= 0 or epochs <= 0:
        return 1.0
    progress = step / total_steps * epochs
    return factor ** sum(progress >= d for d in drops)
