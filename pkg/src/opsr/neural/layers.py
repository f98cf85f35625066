"""Building blocks: alternating dense/residual stacks and unmasked attention."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

DTYPE = torch.float64

_ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu, "identity": lambda x: x}


@dataclass(frozen=True)
class NetSpec:
    """Dense stack: ``n_single`` plain layers interleaved with ``n_residual`` residual blocks.

    The stack starts with a plain layer mapping ``in_dim`` to ``width`` and
    alternates from there; a final linear layer maps to ``out_dim``.
    """

    in_dim: int
    out_dim: int
    width: int = 64
    n_single: int = 2
    n_residual: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.width) < 1:
            raise ValueError("widths must be >= 1")
        if self.n_single < 1 or self.n_residual < 0:
            raise ValueError("need at least one single layer and a non-negative residual count")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layout(self) -> list[str]:
        """Block roles in order, e.g. ``["single", "residual", "single"]``."""
        out, s, r = [], self.n_single, self.n_residual
        while s or r:
            if s:
                out.append("single")
                s -= 1
            if r:
                out.append("residual")
                r -= 1
        return out


# Layer counts and widths used at full scale, kept for reference; the toy
# defaults below are far smaller so training fits on a desktop CPU.
FULL_SCALE = {
    "position_encoder": {"n_single": 6, "n_residual": 5, "max_width": 800},
    "operator_encoder": {"n_single": 5, "n_residual": 4, "max_width": 1000},
    "inverse_decoder": {"n_single": 5, "n_residual": 4, "max_width": 1000},
    "attention_layers": 3,
    "operator_feature": 500,
    "numerical_feature": 200,
    "branch_samples": 200,
    "trunk_samples": 1600,
}


class Single(nn.Module):
    def __init__(self, n_in: int, n_out: int, act: str):
        super().__init__()
        self.lin = nn.Linear(n_in, n_out, dtype=DTYPE)
        self.act = _ACTIVATIONS[act]

    def forward(self, x):
        return self.act(self.lin(x))


class Residual(nn.Module):
    """``x + f(x)`` with ``f`` two activated linear layers of equal width."""

    def __init__(self, width: int, act: str):
        super().__init__()
        self.l1 = nn.Linear(width, width, dtype=DTYPE)
        self.l2 = nn.Linear(width, width, dtype=DTYPE)
        self.act = _ACTIVATIONS[act]

    def f(self, x):
        return self.act(self.l2(self.act(self.l1(x))))

    def forward(self, x):
        return x + self.f(x)


class DenseNet(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        blocks = []
        width = spec.in_dim
        for role in spec.layout():
            if role == "single":
                blocks.append(Single(width, spec.width, spec.activation))
                width = spec.width
            else:
                blocks.append(Residual(width, spec.activation))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(width, spec.out_dim, dtype=DTYPE)

    def forward(self, x):
        if x.shape[-1] != self.spec.in_dim:
            raise ValueError(f"expected input width {self.spec.in_dim}, got {x.shape[-1]}")
        for b in self.blocks:
            x = b(x)
        return self.head(x)


def dense_forward(net: DenseNet, x) -> torch.Tensor:
    """Forward value with the autograd graph attached for reverse-mode gradients."""
    x = torch.as_tensor(x, dtype=DTYPE)
    return net(x)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention without masks."""

    def __init__(self, dim: int, heads: int = 4):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.h = heads
        self.q = nn.Linear(dim, dim, dtype=DTYPE)
        # a key bias only shifts every score in a row equally, so softmax ignores it
        self.k = nn.Linear(dim, dim, bias=False, dtype=DTYPE)
        self.v = nn.Linear(dim, dim, dtype=DTYPE)
        self.o = nn.Linear(dim, dim, dtype=DTYPE)

    def forward(self, query, keys):
        # query (..., m, d), keys (..., n, d)
        *lead, m, d = query.shape
        n = keys.shape[-2]
        dh = d // self.h

        def split(t, length):
            return t.reshape(*lead, length, self.h, dh).transpose(-3, -2)

        q = split(self.q(query), m)
        k = split(self.k(keys), n)
        v = split(self.v(keys), n)
        w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (w @ v).transpose(-3, -2).reshape(*lead, m, d)
        return self.o(out)


class AttentionLayer(nn.Module):
    """Self-attention followed by a position-wise feed-forward, both residual."""

    def __init__(self, dim: int, heads: int = 4, ff: int | None = None):
        super().__init__()
        self.att = MultiHeadAttention(dim, heads)
        ff = ff or 2 * dim
        self.ff1 = nn.Linear(dim, ff, dtype=DTYPE)
        self.ff2 = nn.Linear(ff, dim, dtype=DTYPE)

    def forward(self, x, keys=None):
        x = x + self.att(x, x if keys is None else keys)
        return x + self.ff2(torch.tanh(self.ff1(x)))


class PoolByAttention(nn.Module):
    """Attend from ``k`` learned seed vectors onto a set; output is order-free."""

    def __init__(self, dim: int, heads: int = 4, seeds: int = 1):
        super().__init__()
        self.seed = nn.Parameter(torch.randn(seeds, dim, dtype=DTYPE) / math.sqrt(dim))
        self.layer = AttentionLayer(dim, heads)

    def forward(self, x):
        s = self.seed.expand(*x.shape[:-2], *self.seed.shape)
        return self.layer(s, x)
