"""AdamW with decoupled weight decay, gradient clipping, plateau scheduling."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter list.

    Update: m_hat = m/(1-b1^t), v_hat = v/(1-b2^t),
            w -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * w).
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            g = np.asarray(g, dtype=float).reshape(p.data.shape)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state_dict(self):
        return {
            "t": self.t,
            "lr": self.lr,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=float).reshape(self.m[k].shape)
            self.v[k] = np.array(state["v"][k], dtype=float).reshape(self.v[k].shape)


def clip_grad_global_norm(params, max_norm):
    """Scale all gradients so their joint Euclidean norm is at most max_norm."""
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(np.asarray(p.grad) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class ReduceLROnPlateau:
    """Halve the learning rate after `patience` epochs without improvement.

    Improvement means val_loss < best * (1 - threshold) (relative threshold).
    An improving epoch resets the counter; a reduction also resets it.
    """

    def __init__(self, optimizer, factor=0.5, patience=100, threshold=1e-4, min_lr=0.0):
        self.optimizer = optimizer
        self.factor = float(factor)
        self.patience = int(patience)
        self.threshold = float(threshold)
        self.min_lr = float(min_lr)
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss):
        val_loss = float(val_loss)
        if val_loss < self.best * (1.0 - self.threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.optimizer.lr

    def state_dict(self):
        return {"best": self.best, "bad_epochs": self.bad_epochs}

    def load_state_dict(self, state):
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
