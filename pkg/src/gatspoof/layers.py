"""Parameter containers: a tiny module system over :mod:`gatspoof.autodiff`."""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class; parameters are discovered from instance attributes.

    Tensors with ``requires_grad`` are parameters, numpy arrays listed in
    ``_buffers`` are persistent state (BN running statistics), and nested
    modules (directly or in lists) are walked recursively in attribute
    order.
    """

    _buffers: tuple[str, ...] = ()
    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + name] = value
        for name, child in self._children():
            out.update(child.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix=""):
        out = {prefix + name: getattr(self, name) for name in self._buffers}
        for name, child in self._children():
            out.update(child.named_buffers(f"{prefix}{name}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return state

    def load_state_dict(self, state):
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)
        for k, b in buffers.items():
            b[...] = state[k]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng, shape, fan_in, dtype):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), padding=(0, 0), dtype=np.float32):
        kh, kw = kernel
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.weight = Tensor(he_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, dtype), requires_grad=True)

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.stride, self.padding)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, n_features, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(n_features, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, rng, in_features, out_features, bias=True, dtype=np.float32):
        self.weight = Tensor(he_uniform(rng, (in_features, out_features), in_features, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y
