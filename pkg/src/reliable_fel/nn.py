"""Parameter containers and layers built on :mod:`reliable_fel.autograd`."""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ConfigError, IncompatibleCheckpointError, ShapeError


class Module:
    """Owns trainable tensors, float buffers and child modules as attributes."""

    training = True
    _buffers: tuple = ()

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def children(self):
        for value in vars(self).values():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                yield from (v for v in value if isinstance(v, Module))

    def train(self, mode=True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update((name, np.asarray(b, dtype=np.float64).copy()) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = {n: t.shape for n, t in params.items()}
        expected.update((n, np.shape(b)) for n, b in buffers.items())
        problems = [f"{n}: expected {shape}, got {np.shape(state[n]) if n in state else 'missing'}"
                    for n, shape in expected.items()
                    if n not in state or np.shape(state[n]) != shape]
        problems += [f"{n}: unexpected" for n in state if n not in expected]
        if problems:
            raise IncompatibleCheckpointError("checkpoint does not fit model: " + "; ".join(problems))
        for n, p in params.items():
            p.data = np.array(state[n], dtype=np.float64)
        for n in buffers:
            owner, attr = self._resolve(n)
            setattr(owner, attr, np.array(state[n], dtype=np.float64))

    def _resolve(self, dotted):
        *path, attr = dotted.split(".")
        obj = self
        for part in path:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        return obj, attr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(array, name=None):
    return Tensor(array, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = _param(np.zeros(n_out)) if bias else None

    def forward(self, x):
        out = ag.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = _param(np.ones(dim))
        self.bias = _param(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return ag.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm1d(Module):
    """Normalizes each feature over the batch axis; running stats at eval."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.gain = _param(np.ones(dim))
        self.bias = _param(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        if self.training:
            mu = ag.mean(x, axis=0, keepdims=True)
            xc = x - mu
            var = ag.mean(xc * xc, axis=0, keepdims=True)
            n = x.shape[0]
            unbiased = var.data[0] * (n / (n - 1)) if n > 1 else var.data[0]
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1 - m) * self.running_var + m * unbiased
            xhat = xc / ag.sqrt(var + self.eps)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gain + self.bias


class Dropout(Module):
    """Inverted dropout; identity when ``p == 0`` or in eval mode."""

    def __init__(self, p, rng=None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng

    def forward(self, x):
        if not self.training or self.p == 0.0:
            return x
        keep = self.rng.random(x.shape) >= self.p
        return x * (keep / (1.0 - self.p))


class FeedForward(Module):
    def __init__(self, dim, hidden, rng):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))


def split_heads(x, n_heads):
    """(..., N, D) -> (..., heads, N, D // heads)."""
    *lead, n, d = x.shape
    x = ag.reshape(x, (*lead, n, n_heads, d // n_heads))
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ag.transpose(x, axes)


def merge_heads(x):
    """(..., heads, N, d) -> (..., N, heads * d)."""
    *lead, h, n, d = x.shape
    axes = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return ag.reshape(ag.transpose(x, axes), (*lead, n, h * d))


def attention(q, k, v, n_heads, bias=None):
    """Scaled dot-product attention per head.

    ``q`` is (..., Nq, D), ``k``/``v`` are (..., Nk, D). ``bias`` broadcasts
    against the (..., heads, Nq, Nk) score tensor. Returns the merged output
    (..., Nq, D) and the attention weights.
    """
    d_model = q.shape[-1]
    if n_heads < 1 or d_model % n_heads:
        raise ConfigError(f"{n_heads} heads do not divide width {d_model}")
    if k.shape[-1] != d_model or v.shape[-1] != d_model or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention operands mismatch: q{q.shape} k{k.shape} v{v.shape}")
    qh, kh, vh = split_heads(q, n_heads), split_heads(k, n_heads), split_heads(v, n_heads)
    scores = ag.matmul(qh, ag.swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(d_model // n_heads))
    if bias is not None:
        scores = scores + bias
    weights = ag.softmax(scores, axis=-1)
    return merge_heads(ag.matmul(weights, vh)), weights


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, n_heads, rng):
        if n_heads < 1 or dim % n_heads:
            raise ConfigError(f"{n_heads} heads do not divide width {dim}")
        self.n_heads = n_heads
        self.w_q = Linear(dim, dim, rng, bias=False)
        self.w_k = Linear(dim, dim, rng, bias=False)
        self.w_v = Linear(dim, dim, rng, bias=False)
        self.w_o = Linear(dim, dim, rng, bias=False)
        self.last_weights = None

    def forward(self, x):
        out, self.last_weights = attention(self.w_q(x), self.w_k(x), self.w_v(x), self.n_heads)
        return self.w_o(out)
