"""Reverse-mode gradients against central finite differences, block by block."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..expr.operators import N_KINDS
from .layers import DTYPE, AttentionLayer, DenseNet, NetSpec, Residual
from .model import HyperParams, OperatorNet

BLOCKS = ("dense", "residual", "attention", "trunk", "encoder", "decoder", "numerical", "inverse", "judgment")
TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheck:
    block: str
    max_rel_error: float
    n_checked: int

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _block(name: str, hp: HyperParams, gen: torch.Generator):
    """(module, closure producing the block output) for a named block at toy size."""

    def rnd(*shape):
        return torch.randn(*shape, generator=gen, dtype=DTYPE)

    if name == "dense":
        m = DenseNet(NetSpec(5, 3, width=8, n_single=2, n_residual=1))
        x = rnd(4, 5)
        return m, lambda: m(x)
    if name == "residual":
        m = Residual(8, "tanh")
        x = rnd(4, 8)
        return m, lambda: m(x)
    if name == "attention":
        m = AttentionLayer(8, heads=2)
        x = rnd(2, 5, 8)
        return m, lambda: m(x)
    net = OperatorNet(hp)
    if name == "trunk":
        x = rnd(6, 2)
        return net.trunk, lambda: net.trunk(x)
    if name == "encoder":
        x = rnd(3, hp.branch_samples)
        return net.encoder(4), lambda: net.encoder(4)(x)
    if name == "decoder":
        x = rnd(3, hp.op_dim)
        return net.decoder, lambda: net.decoder(x)
    if name == "numerical":
        t, v = rnd(2, 7, hp.num_dim), rnd(2, 7)
        return net.numerical, lambda: net.numerical(t, v)
    if name == "inverse":
        x = rnd(3, hp.num_dim)
        return net.inverse, lambda: net.inverse(x)
    if name == "judgment":
        basic, target = rnd(N_KINDS, hp.op_dim), rnd(2, hp.op_dim)
        return net.judge, lambda: net.judge(basic, target)
    raise KeyError(f"unknown block {name!r}; choose from {BLOCKS}")


def parameter_gradients(module: nn.Module, loss_fn) -> dict[str, torch.Tensor]:
    """Gradient of ``loss_fn()`` for every parameter; frozen parameters get exact zeros."""
    named = list(module.named_parameters())
    live = [(n, p) for n, p in named if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in live], allow_unused=True)
    out = {n: torch.zeros_like(p) for n, p in named}
    for (n, p), g in zip(live, grads):
        if g is not None:
            out[n] = g.detach().clone()
    return out


def gradient_check(block: str, seed: int = 0, max_params: int = 200, step: float = 1e-5,
                   hp: HyperParams | None = None) -> GradCheck:
    """Max relative error between autograd and central differences on sampled parameters.

    The scalar loss is a fixed random projection of the block output plus
    half its squared norm.  Relative error uses ``max(|a|, |b|, 1e-6)`` as the
    denominator so parameters with vanishing gradients do not divide by zero.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    hp = hp or HyperParams(seed=seed)
    module, out_fn = _block(block, hp, gen)
    with torch.no_grad():
        w = torch.randn(out_fn().shape, generator=gen, dtype=DTYPE)

    def loss_fn():
        o = out_fn()
        return (o * w).sum() + 0.5 * (o ** 2).sum()

    grads = parameter_gradients(module, loss_fn)
    params = [(n, p) for n, p in module.named_parameters() if p.requires_grad]
    flat = [(n, p, i) for n, p in params for i in range(p.numel())]
    pick = torch.randperm(len(flat), generator=gen)[:max_params].tolist()
    worst = 0.0
    with torch.no_grad():
        for j in pick:
            n, p, i = flat[j]
            view = p.view(-1)
            orig = view[i].item()
            view[i] = orig + step
            fp = loss_fn().item()
            view[i] = orig - step
            fm = loss_fn().item()
            view[i] = orig
            fd = (fp - fm) / (2 * step)
            g = grads[n].view(-1)[i].item()
            worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-6))
    return GradCheck(block, worst, len(pick))


def check_all(seed: int = 0, blocks=BLOCKS) -> list[GradCheck]:
    return [gradient_check(b, seed) for b in blocks]
