"""Adam with decoupled weight decay and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from typing import Dict, Tuple

import numpy as np

from factorizephys.autodiff import Tensor
from factorizephys.errors import ConfigError
from factorizephys.model import ModelParams


def _cos_anneal(start: float, end: float, pct: float) -> float:
    return end + (start - end) * (1.0 + math.cos(math.pi * pct)) / 2.0


def one_cycle_lr(step: int, total_steps: int, cfg) -> float:
    """
    Learning rate at ``step`` of ``total_steps``.

    Cosine ramp from ``max_lr / div_factor`` to ``max_lr`` over the first
    ``warmup_fraction`` of the steps, then cosine decay to
    ``max_lr / final_div_factor`` at the last step. ``cfg`` is anything with
    those four attributes, usually a TrainConfig.

    Raises:
        ConfigError: If ``step`` is outside ``[0, total_steps)``.
    """
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps})")
    initial = cfg.max_lr / cfg.div_factor
    final = cfg.max_lr / cfg.final_div_factor
    peak_step = cfg.warmup_fraction * total_steps
    if step <= peak_step:
        return _cos_anneal(initial, cfg.max_lr, step / peak_step)
    return _cos_anneal(cfg.max_lr, final, (step - peak_step) / (total_steps - 1 - peak_step))


class Adam:
    """
    Adam with bias correction and decoupled weight decay.

    Parameters are immutable tensors, so ``step`` returns a new ModelParams
    instead of updating in place. Moments are kept in float64.
    """

    def __init__(
        self,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise ConfigError(f"invalid betas {betas}")
        if eps < 0 or weight_decay < 0:
            raise ConfigError("eps and weight_decay must be non-negative")
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self.exp_avg: Dict[str, np.ndarray] = {}
        self.exp_avg_sq: Dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, cfg) -> "Adam":
        return cls((cfg.beta1, cfg.beta2), cfg.eps, cfg.weight_decay)

    def step(self, params: ModelParams, lr: float) -> ModelParams:
        """Apply one update from the ``.grad`` of every parameter; tensors without a gradient are kept."""
        self.steps += 1
        beta1, beta2 = self.betas
        bias1 = 1.0 - beta1 ** self.steps
        bias2 = 1.0 - beta2 ** self.steps
        updated: Dict[str, Tensor] = {}

        for name, p in params.named().items():
            if p.grad is None:
                continue
            grad = p.grad.astype(np.float64)
            m = self.exp_avg.setdefault(name, np.zeros_like(grad))
            v = self.exp_avg_sq.setdefault(name, np.zeros_like(grad))
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad

            value = p.data.astype(np.float64)
            if self.weight_decay:
                value = value * (1.0 - lr * self.weight_decay)
            value = value - lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            updated[name] = Tensor(value, requires_grad=True, dtype=p.dtype, name=name)

        return params.with_tensors(updated)


__all__ = ["one_cycle_lr", "Adam"]
