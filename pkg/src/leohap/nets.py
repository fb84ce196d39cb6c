"""Minimal float64 MLP with manual backprop plus an Adam optimizer.

Kept framework-free so that training is deterministic, checkpointable as
plain arrays, and cheap to finite-difference in tests.
"""

import numpy as np


class Mlp:
    """Affine + ReLU stack; the output layer is linear."""

    def __init__(self, sizes, rng=None, params=None):
        self.sizes = list(sizes)
        if params is not None:
            self.weights = [w.copy() for w in params[0]]
            self.biases = [b.copy() for b in params[1]]
        else:
            if rng is None:
                raise ValueError("need an rng (or explicit params) to initialize")
            self.weights, self.biases = [], []
            for n_in, n_out in zip(sizes[:-1], sizes[1:]):
                scale = np.sqrt(2.0 / n_in)
                self.weights.append(rng.standard_normal((n_in, n_out)) * scale)
                self.biases.append(np.zeros(n_out))

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x, want_cache=False):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.weights[i] + self.biases[i]
            if i < self.n_layers - 1:
                z = np.maximum(z, 0.0)
            acts.append(z)
            h = z
        if want_cache:
            return h, acts
        return h

    def backward(self, cache, dy):
        """Gradients of sum(dy * output) w.r.t. parameters and the input.

        Returns (grad_weights, grad_biases, dx)."""
        acts = cache
        gw = [None] * self.n_layers
        gb = [None] * self.n_layers
        delta = np.asarray(dy, dtype=float)
        for i in range(self.n_layers - 1, -1, -1):
            if i < self.n_layers - 1:
                delta = delta * (acts[i + 1] > 0.0)
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return gw, gb, delta

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        return self.weights + self.biases

    def copy(self):
        return Mlp(self.sizes, params=(self.weights, self.biases))

    def flatten(self):
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        off = 0
        for p in self.parameters():
            n = p.size
            p[...] = np.asarray(flat[off:off + n]).reshape(p.shape)
            off += n
        if off != len(flat):
            raise ValueError("flat parameter vector has the wrong length")


def soft_update(target: Mlp, online: Mlp, tau: float):
    """In-place Polyak update: target <- (1 - tau) * target + tau * online."""
    if target.sizes != online.sizes:
        raise ValueError("network shapes do not match")
    for pt, po in zip(target.parameters(), online.parameters()):
        pt *= (1.0 - tau)
        pt += tau * po


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state_dict(self, state):
        self.m = [np.asarray(a, dtype=float) for a in state["m"]]
        self.v = [np.asarray(a, dtype=float) for a in state["v"]]
        self.t = int(state["t"])
