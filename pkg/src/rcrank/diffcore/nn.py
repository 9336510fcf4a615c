"""Parameter container and the handful of layers the model is built from."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """Trainable tensor carrying its own Adam moments."""

    __slots__ = ("m", "v", "step")

    def __init__(self, data, name=None):
        arr = np.array(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(get_default_dtype())
        super().__init__(arr, requires_grad=True, name=name)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + "/")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}/{i}/")
                    elif isinstance(item, Parameter):
                        yield f"{name}/{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}/{k}/")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else value.values() if isinstance(value, dict) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True, prefix=""):
        """Copy arrays in; with ``prefix`` only keys under it are considered."""
        own = dict(self.named_parameters())
        wanted = {k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)}
        missing = [k for k in own if k not in wanted]
        unexpected = [k for k in wanted if k not in own]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for k, arr in wanted.items():
            if k not in own:
                continue
            p = own[k]
            if p.data.shape != arr.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} vs model {p.data.shape}")
            p.data = np.array(arr, dtype=p.data.dtype)
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
            p.step = 0
        return missing


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Parameter(_uniform(rng, (n_in, n_out), bound))
        self.bias = Parameter(_uniform(rng, (n_out,), bound)) if bias else None

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear expects last dim {self.weight.shape[0]}, got {x.shape}")
        lead = x.shape[:-1]
        y = T.matmul(x.reshape(-1, x.shape[-1]), self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(lead + (self.weight.shape[1],))


class Embedding(Module):
    def __init__(self, n, d, rng, std=None):
        std = 1.0 / math.sqrt(d) if std is None else std
        self.weight = Parameter((rng.standard_normal((n, d)) * std).astype(get_default_dtype()))

    def __call__(self, ids):
        return T.embedding_lookup(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        dt = get_default_dtype()
        self.gamma = Parameter(np.ones(d, dtype=dt))
        self.beta = Parameter(np.zeros(d, dtype=dt))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Stack of Linear layers with relu between them (none after the last)."""

    def __init__(self, sizes, rng, dropout=0.0, seed_rng=None):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.dropout = dropout
        self.drop_rng = seed_rng

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
                if self.dropout and self.drop_rng is not None:
                    x = T.dropout(x, self.dropout, self.drop_rng, self.training)
        return x


def key_mask_bias(mask, dtype=None):
    """(B, Nk) bool -> (B, 1, Nk) additive bias: 0 where valid, -1e9 on padding."""
    dtype = dtype or get_default_dtype()
    return np.where(mask, 0.0, -1e9).astype(dtype)[:, None, :]


class MultiHeadAttention(Module):
    def __init__(self, d, heads, rng):
        if d % heads:
            raise ShapeError(f"d={d} not divisible by heads={heads}")
        self.d, self.heads = d, heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x):
        B, N, _ = x.shape
        return x.reshape(B, N, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, xq, xkv, key_mask=None, bias=None):
        """``bias`` is an optional (B, Nq, Nk) tensor added to every head's scores."""
        B, Nq, _ = xq.shape
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d // self.heads))
        if bias is not None:
            scores = scores + bias.reshape(B, 1, Nq, bias.shape[-1])
        mask = None if key_mask is None else key_mask_bias(key_mask, scores.dtype)[:, None]
        attn = T.softmax(scores, axis=-1, mask=mask)
        out = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, Nq, self.d)
        return self.o(out)


class TransformerLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, d, heads, ffn, rng, dropout=0.0, drop_rng=None):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ff = MLP([d, ffn, d], rng)
        self.ln2 = LayerNorm(d)
        self.dropout = dropout
        self.drop_rng = drop_rng

    def _drop(self, x):
        if self.drop_rng is None:
            return x
        return T.dropout(x, self.dropout, self.drop_rng, self.training)

    def __call__(self, x, key_mask=None, bias=None):
        x = self.ln1(x + self._drop(self.attn(x, x, key_mask, bias)))
        return self.ln2(x + self._drop(self.ff(x)))


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        bound = 1.0 / math.sqrt(c_in * kh * kw)
        self.weight = Parameter(_uniform(rng, (c_out, c_in, kh, kw), bound))
        self.bias = Parameter(_uniform(rng, (c_out,), bound))
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def masked_mean(x, mask):
    """Mean of (B, N, d) over valid positions given a (B, N) bool mask."""
    m = mask.astype(x.dtype)[:, :, None]
    count = np.maximum(m.sum(axis=1), 1.0)
    return T.tsum(x * m, axis=1) * (1.0 / count)
