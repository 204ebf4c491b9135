"""Gradient descent with momentum and global-norm clipping."""

from __future__ import annotations

import numpy as np


class Sgd:
    """Classic momentum SGD over a {name: Tensor} parameter dict.

    Names matching any prefix in `freeze` are never updated (bit-exact
    freezing). Updates iterate in sorted name order so results do not depend
    on dict insertion order.
    """

    def __init__(self, params, lr, momentum=0.9, clip_norm=5.0, freeze=()):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.freeze = tuple(freeze)
        self.names = sorted(params)
        self.velocity = {n: np.zeros_like(params[n].data) for n in self.names}

    def _frozen(self, name):
        return any(name.startswith(p) for p in self.freeze)

    def zero_grad(self):
        for n in self.names:
            self.params[n].zero_grad()

    def step(self):
        active = [n for n in self.names
                  if not self._frozen(n) and self.params[n].grad is not None]
        if not active:
            return 0.0
        total = 0.0
        for n in active:
            g = self.params[n].grad
            total += float(np.sum(g.astype(np.float64) ** 2))
        norm = np.sqrt(total)
        scale = 1.0
        if self.clip_norm > 0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
        for n in active:
            p = self.params[n]
            v = self.velocity[n]
            v *= self.momentum
            v += scale * p.grad
            p.data -= np.asarray(self.lr * v, dtype=p.data.dtype)
        return float(norm)
