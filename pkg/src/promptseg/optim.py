"""Decoupled-weight-decay Adam and the multistep learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


@dataclass
class AdamWConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class SchedulerConfig:
    gamma: float = 0.1
    milestones: tuple = (1,)


def lr_at(epoch: int, lr: float, gamma: float = 0.1, milestones=(1,)) -> float:
    """lr * gamma^(number of milestones <= epoch); milestones in epochs."""
    ms = sorted(milestones)
    if list(ms) != list(milestones):
        raise ContractError("milestones must be sorted")
    k = sum(1 for m in ms if m <= epoch)
    return lr * gamma ** k


class AdamW:
    """p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).

    State (first/second moments, step count) is keyed by parameter name
    so it serializes alongside checkpoints for exact resume.
    """

    def __init__(self, params: list[tuple[str, Tensor]], config: AdamWConfig | None = None):
        self.config = config or AdamWConfig()
        if self.config.lr <= 0:
            raise ContractError("lr must be positive")
        self.params = list(params)
        self.state = {
            name: {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data), "step": 0}
            for name, t in self.params
        }

    def zero_grad(self):
        for _, t in self.params:
            t.grad = None

    def step(self, lr: float | None = None):
        c = self.config
        lr = c.lr if lr is None else lr
        for name, t in self.params:
            if not t.requires_grad:
                continue
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            st = self.state[name]
            st["step"] += 1
            k = st["step"]
            st["m"] = c.beta1 * st["m"] + (1.0 - c.beta1) * g
            st["v"] = c.beta2 * st["v"] + (1.0 - c.beta2) * (g * g)
            m_hat = st["m"] / (1.0 - c.beta1 ** k)
            v_hat = st["v"] / (1.0 - c.beta2 ** k)
            t.data[...] = t.data - lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * t.data)

    def state_arrays(self) -> dict:
        """Flat name -> array view of the full optimizer state (for resume)."""
        out = {}
        for name, st in self.state.items():
            out[f"{name}.m"] = st["m"]
            out[f"{name}.v"] = st["v"]
            out[f"{name}.step"] = np.array([st["step"]], dtype=np.float64)
        return out

    def load_state_arrays(self, arrays: dict):
        for name, st in self.state.items():
            st["m"] = arrays[f"{name}.m"].copy()
            st["v"] = arrays[f"{name}.v"].copy()
            st["step"] = int(arrays[f"{name}.step"][0])
