"""Minimal feed-forward network stack: MLP, exact backprop, Adam, masked softmax.

Everything is float64 and seeded; identical seeds and inputs reproduce
bit-identical parameter trajectories single-threaded.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NoValidActionError, NumericError

NEG_INF = -np.inf


class MLP:
    """Fully connected net: ReLU hidden layers, affine output layer.

    Parameters live in ``self.params``, a flat list
    ``[W0, b0, W1, b1, ...]`` with ``W`` of shape (fan_in, fan_out).
    """

    def __init__(self, layer_sizes, rng=None):
        if len(layer_sizes) < 2:
            raise DimensionError("need at least input and output sizes")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layer_sizes = list(int(s) for s in layer_sizes)
        self.params = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def forward(self, x: np.ndarray):
        """Returns (logits, cache).  ``x``: (B, in) or (in,)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if h.shape[1] != self.layer_sizes[0]:
            raise DimensionError(
                f"input width {h.shape[1]} != first layer width {self.layer_sizes[0]}"
            )
        cache = [h]
        for i in range(self.n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ w + b
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            else:
                h = z
            cache.append(h)
        out = h[0] if squeeze else h
        return out, cache

    def backward(self, cache, dout: np.ndarray):
        """Exact reverse-mode gradients.

        ``dout`` is dLoss/dlogits from the matching forward pass.  Returns
        (grads, dx) with ``grads`` shaped like ``self.params``.
        """
        d = np.atleast_2d(np.asarray(dout, dtype=np.float64))
        if d.shape != cache[-1].shape:
            raise DimensionError(
                f"output gradient shape {d.shape} != logits shape {cache[-1].shape}"
            )
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            h_in, h_out = cache[i], cache[i + 1]
            if i < self.n_layers - 1:
                d = d * (h_out > 0)  # ReLU gate (post-activation > 0 iff pre > 0)
            grads[2 * i] = h_in.T @ d
            grads[2 * i + 1] = d.sum(axis=0)
            d = d @ self.params[2 * i].T
        return grads, d

    # flat-vector views for finite differencing and checkpoints

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        total = sum(p.size for p in self.params)
        if len(vec) != total:
            raise DimensionError(
                f"flat vector length {len(vec)} != parameter count {total}"
            )
        i = 0
        for k, p in enumerate(self.params):
            self.params[k] = vec[i : i + p.size].reshape(p.shape).copy()
            i += p.size


class Adam:
    """Adam with bias correction over a list of parameter arrays."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        """One in-place update.  Raises NumericError on non-finite gradients."""
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self) -> dict:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.t = int(arrays["t"])
        self.m = [arrays[f"m{i}"] for i in range(len(self.m))]
        self.v = [arrays[f"v{i}"] for i in range(len(self.v))]


def adam_step(params, grads, opt: Adam):
    """Functional wrapper around :meth:`Adam.step`."""
    opt.step(params, grads)
    return params, opt


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-probabilities over valid entries; invalid entries get -inf.

    Works on single vectors or batches of rows.  Raises NoValidActionError
    when any row has no valid entry.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape != mask.shape:
        raise DimensionError(f"logits {logits.shape} vs mask {mask.shape}")
    squeeze = logits.ndim == 1
    z = np.atleast_2d(logits)
    m = np.atleast_2d(mask)
    if not m.any(axis=1).all():
        raise NoValidActionError("a row has no valid action")
    neg = np.where(m, z, NEG_INF)
    shift = neg.max(axis=1, keepdims=True)
    ex = np.where(m, np.exp(neg - shift), 0.0)
    logp = np.where(m, neg - shift - np.log(ex.sum(axis=1, keepdims=True)), NEG_INF)
    return logp[0] if squeeze else logp


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probabilities over valid entries; invalid entries get 0."""
    logp = masked_log_softmax(logits, mask)
    return np.where(np.asarray(mask, dtype=bool), np.exp(logp), 0.0)
