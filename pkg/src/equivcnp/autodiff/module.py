"""Parameter containers: a tiny module tree with named parameters."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, affine, relu


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Base class; parameters are ``Tensor`` attributes with ``requires_grad``.

    Submodules may be stored directly or in lists; names are dotted paths
    (``decoder.0.kernel.layers.1.weight``) and are stable across runs.
    """

    def named_parameters(self, prefix=""):
        out = {}
        for key in sorted(vars(self)):
            val = getattr(self, key)
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state, strict=True):
        own = self.named_parameters()
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"parameter mismatch: missing={missing} unexpected={extra}")
        for k, p in own.items():
            if k in state:
                arr = np.asarray(state[k], dtype=np.float64)
                if arr.shape != p.shape:
                    raise KeyError(f"{k}: shape {arr.shape} != {p.shape}")
                p.data = arr.copy()


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map acting on the last axis: ``x @ W + b``."""

    def __init__(self, n_in, n_out, rng, bias=True):
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(uniform_init(rng, n_in, (n_in, n_out)))
        self.bias = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return affine(x, self.weight, self.bias)


class MLP(Module):
    def __init__(self, n_in, hidden, n_out, rng):
        sizes = [n_in, *hidden, n_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)
