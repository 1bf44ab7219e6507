"""Adaptive-moment gradient descent (Adam) over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .errors import CcvcError
from .tensor import Tensor


class Adam:
    """Standard Adam with bias correction, operating in place on Tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        """One update. Grads must be populated; they are left untouched."""
        for name, p in self.params.items():
            if p.grad is None:
                raise CcvcError(f"optimizer_step: parameter {name!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    # -- persistence (training resume must be bit-exact) ---------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step_count": np.array([self.step_count], dtype=np.int64)}
        for k in self.params:
            out[f"m::{k}"] = self.m[k]
            out[f"v::{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.step_count = int(arrays["step_count"][0])
        for k in self.params:
            self.m[k] = np.array(arrays[f"m::{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"v::{k}"], dtype=np.float64)
