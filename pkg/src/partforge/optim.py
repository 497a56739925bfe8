"""Adam optimizer over named Tensor parameter dicts."""

import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, lr_scale=None):
        """params: dict name -> Tensor. lr_scale optionally maps a name
        prefix to a multiplier (layer-wise rates; 0 freezes the group)."""
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scale = lr_scale or {}
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def _scale(self, name):
        for prefix, s in self.lr_scale.items():
            if name.startswith(prefix):
                return s
        return 1.0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, clip_norm=None):
        self.t += 1
        if clip_norm is not None:
            total = 0.0
            for p in self.params.values():
                if p.grad is not None:
                    total += float((p.grad ** 2).sum())
            total = np.sqrt(total)
            if total > clip_norm:
                factor = clip_norm / total
                for p in self.params.values():
                    if p.grad is not None:
                        p.grad *= factor
        for name, p in self.params.items():
            if p.grad is None:
                continue
            scale = self._scale(name)
            if scale == 0.0:
                continue
            g = p.grad + self.weight_decay * p.data
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = self.m[name] / (1 - self.b1 ** self.t)
            vhat = self.v[name] / (1 - self.b2 ** self.t)
            p.data -= self.lr * scale * mhat / (np.sqrt(vhat) + self.eps)
