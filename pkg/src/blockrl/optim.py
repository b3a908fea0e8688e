"""Adam optimizer over a ParameterStore."""

from __future__ import annotations

import numpy as np

from .tensor import ParameterStore


class Adam:
    def __init__(self, store: ParameterStore, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 names: list[str] | None = None):
        self.store = store
        self.names = list(names) if names is not None else store.names()
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(store[n].data) for n in self.names}
        self.v = {n: np.zeros_like(store[n].data) for n in self.names}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for n in self.names:
            p = self.store[n]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[n]
            v = self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    # -- checkpoint support --

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([float(self.t)])}
        for n in self.names:
            out[f"{prefix}.m.{n}"] = self.m[n]
            out[f"{prefix}.v.{n}"] = self.v[n]
        return out

    def load_state_tensors(self, prefix: str, tensors: dict[str, np.ndarray]):
        self.t = int(tensors[f"{prefix}.t"][0])
        for n in self.names:
            self.m[n] = np.array(tensors[f"{prefix}.m.{n}"], dtype=np.float64)
            self.v[n] = np.array(tensors[f"{prefix}.v.{n}"], dtype=np.float64)
