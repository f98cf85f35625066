"""Synthetic data and the three training stages: forward nets, backward path, judgment head."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import numpy as np
import torch

from ..expr.evaluate import evaluate_array
from ..expr.nodes import Expr, Num, Op, Var
from ..expr.operators import (
    ADD, COS, EXP, INV, LOG, MUL, N_KINDS, POW, ROOT, SCALE, SHIFT, SIN, EvalDomain,
)
from ..opgraph import encode_expression
from .layers import DTYPE
from .model import ALL_KINDS, BINARY, HyperParams, OperatorNet, apply_operator, branch_points, pad_positions, to_valid

FAMILIES = ("mixed", "cubic", "sinusoid", "linear")


class TrainingDiverged(RuntimeError):
    pass


@contextlib.contextmanager
def _single_thread():
    # one intra-op thread keeps reductions in a fixed order, so runs repeat bit for bit
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(n)


@dataclass
class FunctionBatch:
    """Random input functions, evaluable anywhere on [-1, 1]."""

    family: str
    params: torch.Tensor
    scale: torch.Tensor

    def __call__(self, y: torch.Tensor) -> torch.Tensor:
        # -> (batch, len(y))
        p = self.params
        if self.family == "cubic":
            u = p[:, :1] + p[:, 1:2] * y + p[:, 2:3] * y ** 2 + p[:, 3:4] * y ** 3
        elif self.family == "sinusoid":
            u = p[:, :1] * torch.sin(p[:, 1:2] * y + p[:, 2:3])
        else:
            u = p[:, :1] * y + p[:, 1:2]
        return u * self.scale[:, None]


def sample_functions(gen: torch.Generator, batch: int, family: str, ref: torch.Tensor) -> list[FunctionBatch]:
    """Coefficients uniform on (-2, 2); values rescaled so |u| <= 2 on ``ref``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown function family {family!r}")
    fams = [family] if family != "mixed" else ["cubic", "sinusoid"]
    out = []
    for f in fams:
        n = batch if len(fams) == 1 else batch // 2 + (batch % 2 if f == "cubic" else 0)
        width = {"cubic": 4, "sinusoid": 3, "linear": 2}[f]
        params = (torch.rand(n, width, generator=gen, dtype=DTYPE) * 4.0) - 2.0
        fb = FunctionBatch(f, params, torch.ones(n, dtype=DTYPE))
        peak = fb(ref).abs().amax(dim=1)
        fb.scale = torch.clamp(2.0 / torch.clamp(peak, min=1e-12), max=1.0)
        out.append(fb)
    return out


def operator_batch(kind: int, gen: torch.Generator, hp: HyperParams, family: str, positions: torch.Tensor):
    """Branch inputs, trunk positions (padded) and targets for one kind."""
    ref = branch_points(hp)
    ins, outs = [], []
    for fb in sample_functions(gen, hp.batch, family, ref):
        u_ref = to_valid(kind, fb(ref))
        u_pos = to_valid(kind, fb(positions))
        if kind in BINARY:
            fb2 = sample_functions(gen, len(fb.params), family if family != "mixed" else fb.family, ref)[0]
            ins.append(torch.cat([u_ref, fb2(ref)], dim=-1))
            outs.append(apply_operator(kind, u_pos, fb2(positions)))
        else:
            ins.append(u_ref)
            outs.append(apply_operator(kind, u_pos))
    return torch.cat(ins), pad_positions(positions[:, None]), torch.cat(outs)


def _optimizer(params, hp: HyperParams, lr: float, steps: int):
    if hp.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=lr, foreach=True)
    else:
        opt = torch.optim.SGD(params, lr=lr, momentum=hp.momentum, foreach=True)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(steps, 1), eta_min=lr * 1e-3)
    return opt, sched


def _check(loss: torch.Tensor, stage: str, step: int, parts=None):
    if not torch.isfinite(loss):
        extra = f"; per-kind {[round(float(v.detach()), 6) for v in parts]}" if parts else ""
        raise TrainingDiverged(f"{stage}: loss became {float(loss.detach())} at step {step}{extra}")


def train_forward(kinds=ALL_KINDS, hp: HyperParams = HyperParams(seed=0), family: str = "mixed",
                  steps: int | None = None, model: OperatorNet | None = None) -> OperatorNet:
    """Jointly fit per-kind encoders, the shared decoder and the trunk.

    Each step draws fresh input functions for every kind and random trunk
    positions; the loss is the mean over kinds of the value MSE.
    """
    torch.manual_seed(hp.seed)
    model = model or OperatorNet(hp, kinds)
    gen = torch.Generator().manual_seed(hp.seed + 1)
    params = [*model.trunk.parameters(), *model.decoder.parameters()]
    for k in kinds:
        params += list(model.encoder(k).parameters())
    n_steps = steps if steps is not None else hp.epochs
    opt, sched = _optimizer(params, hp, hp.lr, n_steps)
    curve = []
    with _single_thread():
        for step in range(n_steps):
            pos = torch.rand(hp.trunk_samples, generator=gen, dtype=DTYPE) * 2.0 - 1.0
            opt.zero_grad()
            losses = []
            t = None
            for k in kinds:
                u, p, target = operator_batch(k, gen, hp, family, pos)
                t = model.trunk(p) if t is None else t
                pred = model.branch(k, u) @ t.T
                losses.append(torch.mean((pred - target) ** 2))
            loss = torch.stack(losses).mean()
            _check(loss, "forward", step, losses)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 10.0)
            opt.step()
            sched.step()
            curve.append(float(loss.detach()))
    model.curves.setdefault("forward", []).extend(curve)
    return model


def forward_mse(model: OperatorNet, kind: int, seed: int, family: str = "mixed", n_batches: int = 4) -> float:
    """Value MSE on freshly drawn functions and positions (not seen in training)."""
    gen = torch.Generator().manual_seed(10_000 + seed)
    hp = model.hp
    errs = []
    with torch.no_grad():
        for _ in range(n_batches):
            pos = torch.rand(hp.trunk_samples, generator=gen, dtype=DTYPE) * 2.0 - 1.0
            u, p, target = operator_batch(kind, gen, hp, family, pos)
            errs.append(float(torch.mean((model.deeponet(kind, u, p) - target) ** 2)))
    return float(np.mean(errs))


def reference_samples(kind: int, hp: HyperParams) -> torch.Tensor:
    """Branch input used to read off a kind's basic feature: the identity function."""
    y = branch_points(hp)
    u = to_valid(kind, y)
    return torch.cat([u, y]) if kind in BINARY else u


def refresh_basic_features(model: OperatorNet) -> None:
    if tuple(model.kinds) != ALL_KINDS:
        return
    with torch.no_grad():
        feats = [model.operator_feature(k, reference_samples(k, model.hp)) for k in ALL_KINDS]
        model.basic.copy_(torch.stack(feats))


def train_backward(model: OperatorNet, family: str = "mixed", steps: int | None = None) -> OperatorNet:
    """Fit the numerical decoder and inverse decoder with the forward nets frozen."""
    hp = model.hp
    bhp = replace(hp, batch=hp.backward_batch)
    torch.manual_seed(hp.seed + 2)
    gen = torch.Generator().manual_seed(hp.seed + 3)
    params = [*model.numerical.parameters(), *model.inverse.parameters()]
    n_steps = steps if steps is not None else hp.backward_epochs
    opt, sched = _optimizer(params, hp, hp.lr, n_steps)
    curve = []
    with _single_thread():
        for step in range(n_steps):
            pos = torch.rand(hp.set_points, generator=gen, dtype=DTYPE) * 2.0 - 1.0
            opt.zero_grad()
            losses = []
            for k in model.kinds:
                u, p, values = operator_batch(k, gen, bhp, family, pos)
                with torch.no_grad():
                    feat = model.operator_feature(k, u)
                    num = model.decoder(feat)
                    t = model.trunk(p)
                nd = model.numerical(t.expand(len(values), *t.shape), values)
                inv = model.inverse(nd.detach())
                losses.append(torch.mean((nd - num) ** 2) + torch.mean((inv - feat) ** 2))
            loss = torch.stack(losses).mean()
            _check(loss, "backward", step)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 10.0)
            opt.step()
            sched.step()
            curve.append(float(loss.detach()))
    model.curves.setdefault("backward", []).extend(curve)
    refresh_basic_features(model)
    return model


# -- judgment corpus --------------------------------------------------------

_UNARY_KINDS = (INV, SIN, COS, EXP, POW, ROOT, LOG, SHIFT, SCALE)


def random_expression(rng: np.random.Generator, max_depth: int = 4, n_vars: int = 2) -> Expr:
    """Random expression over all kinds; depth counts operator levels."""

    def leaf():
        return Var(int(rng.integers(1, n_vars + 1)))

    def const(lo=-2.0, hi=2.0):
        return Num(round(float(rng.uniform(lo, hi)), 2) or 1.0)

    def go(depth):
        if depth == 0 or (depth < max_depth and rng.random() < 0.3):
            return leaf()
        k = int(rng.integers(1, N_KINDS + 1))
        if k in (ADD, MUL):
            return Op(k, (go(depth - 1), go(depth - 1)), (Num(1.0),))
        child = go(depth - 1)
        if k == POW:
            return Op(POW, (child,), (Num(float(rng.integers(2, 4))),))
        if k == ROOT:
            return Op(ROOT, (child,), (Num(0.5),))
        if k in (SHIFT, SCALE):
            return Op(k, (child,), (const(),))
        return Op(k, (child,))

    return go(max_depth)


@dataclass
class CorpusItem:
    expr: Expr
    X: np.ndarray
    y: np.ndarray

    @property
    def matrix(self):
        return encode_expression(self.expr)


def judgment_corpus(size: int = 50, seed: int = 0, n_points: int = 256, max_depth: int = 4) -> list[CorpusItem]:
    """Distinct well-behaved random expressions with samples on [-1, 1]^2."""
    rng = np.random.default_rng(seed)
    dom = EvalDomain.box((-1.0, 1.0), (-1.0, 1.0))
    out: list[CorpusItem] = []
    seen: set = set()
    tries = 0
    while len(out) < size:
        tries += 1
        if tries > 200 * size:
            raise RuntimeError("could not build the requested corpus")
        e = random_expression(rng, max_depth)
        m = encode_expression(e)
        if not m.edges() or m in seen:
            continue
        X = rng.uniform(-1.0, 1.0, (2 * n_points, 2))
        y = evaluate_array(e, X, domain=dom)
        ok = np.isfinite(y) & (np.abs(y) < 50.0)
        if ok.sum() < n_points or np.std(y[ok]) < 1e-3:
            continue
        seen.add(m)
        out.append(CorpusItem(e, X[ok][:n_points], y[ok][:n_points]))
    return out


def train_judgment(model: OperatorNet, corpus: list[CorpusItem], steps: int | None = None) -> OperatorNet:
    """Per-edge cross-entropy on the corpus; basic features and the target path stay frozen."""
    hp = model.hp
    torch.manual_seed(hp.seed + 4)
    with torch.no_grad():
        targets = torch.stack([model.target_feature(c.X, c.y) for c in corpus])
    labels = torch.as_tensor(np.stack([c.matrix.array for c in corpus]).astype(float), dtype=DTYPE)
    params = list(model.judge.parameters())
    n_steps = steps if steps is not None else hp.judgment_epochs
    opt, sched = _optimizer(params, hp, hp.judgment_lr, n_steps)
    lossf = torch.nn.BCEWithLogitsLoss()
    curve = []
    with _single_thread():
        for step in range(n_steps):
            opt.zero_grad()
            loss = lossf(model.judge_logits(targets), labels)
            _check(loss, "judgment", step)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, 10.0)
            opt.step()
            sched.step()
            curve.append(float(loss.detach()))
    model.curves.setdefault("judgment", []).extend(curve)
    return model


def judgment_accuracy(model: OperatorNet, corpus: list[CorpusItem]) -> tuple[float, float]:
    """(fraction of matrices predicted exactly, fraction of entries predicted correctly)."""
    with torch.no_grad():
        targets = torch.stack([model.target_feature(c.X, c.y) for c in corpus])
        pred = (torch.sigmoid(model.judge_logits(targets)) > model.hp.threshold).numpy()
    truth = np.stack([c.matrix.array for c in corpus])
    exact = float(np.mean([np.array_equal(p, t) for p, t in zip(pred, truth)]))
    return exact, float(np.mean(pred == truth))


def train_all(hp: HyperParams, corpus_size: int = 50, family: str = "mixed") -> tuple[OperatorNet, list[CorpusItem]]:
    model = train_forward(ALL_KINDS, hp, family)
    train_backward(model, family)
    corpus = judgment_corpus(corpus_size, hp.seed)
    train_judgment(model, corpus)
    return model, corpus
