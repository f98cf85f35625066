"""Operator networks: per-kind encoders, shared decoder, trunk, and the backward path."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..expr.operators import (
    ADD, COS, EXP, INV, LOG, MAX_VARS, MUL, N_KINDS, POW, ROOT, SCALE, SHIFT, SIN,
)
from ..opgraph import SIZE, AdjacencyMatrix
from .layers import DTYPE, AttentionLayer, DenseNet, NetSpec, PoolByAttention

ALL_KINDS = tuple(range(1, N_KINDS + 1))
BINARY = (ADD, MUL)

# constant held fixed while an operator is learned as a function-to-function map
OPERATOR_CONSTANTS = {ADD: 1.0, MUL: 1.0, POW: 2.0, ROOT: 0.5, SHIFT: 1.0, SCALE: 2.0}


@dataclass(frozen=True)
class HyperParams:
    seed: int
    op_dim: int = 32
    num_dim: int = 16
    branch_samples: int = 64
    trunk_samples: int = 256
    width: int = 64
    n_single: int = 2
    n_residual: int = 1
    decoder_maps: int = 4
    attention_layers: int = 3
    heads: int = 4
    model_dim: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: str = "adam"
    epochs: int = 2000
    batch: int = 32
    backward_epochs: int = 1000
    set_points: int = 64
    backward_batch: int = 8
    judgment_epochs: int = 3000
    judgment_lr: float = 3e-3
    threshold: float = 0.5

    def __post_init__(self):
        for name in ("op_dim", "num_dim", "branch_samples", "trunk_samples", "width", "decoder_maps",
                     "attention_layers", "heads", "model_dim", "batch", "set_points", "backward_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be > 0")
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.model_dim % self.heads or self.num_dim % self.heads:
            raise ValueError("model_dim and num_dim must be divisible by heads")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)

    def spec(self, n_in: int, n_out: int) -> NetSpec:
        return NetSpec(n_in, n_out, self.width, self.n_single, self.n_residual, "tanh")


def apply_operator(kind: int, u: torch.Tensor, u2: torch.Tensor | None = None) -> torch.Tensor:
    """Pointwise action of ``kind`` (with its fixed constant) on function values."""
    c = OPERATOR_CONSTANTS.get(kind)
    if kind == ADD:
        return c * u + u2
    if kind == MUL:
        return c * u * u2
    if kind == INV:
        return 1.0 / u
    if kind == SIN:
        return torch.sin(u)
    if kind == COS:
        return torch.cos(u)
    if kind == EXP:
        return torch.exp(u)
    if kind in (POW, ROOT):
        return u ** c
    if kind == LOG:
        return torch.log(u)
    if kind == SHIFT:
        return u + c
    if kind == SCALE:
        return u * c
    raise ValueError(f"unknown operator kind {kind}")


def to_valid(kind: int, u: torch.Tensor) -> torch.Tensor:
    """Move function values into the operator's input range."""
    if kind in (INV, LOG, ROOT):
        return 0.2 + u.abs()
    return u


def branch_points(hp: HyperParams) -> torch.Tensor:
    return torch.linspace(-1.0, 1.0, hp.branch_samples, dtype=DTYPE)


def pad_positions(positions) -> torch.Tensor:
    """(n,) or (n, d<=2) positions -> (n, 2), missing coordinates zero."""
    p = torch.as_tensor(np.asarray(positions, dtype=float), dtype=DTYPE)
    if p.ndim == 1:
        p = p[:, None]
    if p.shape[-1] > MAX_VARS:
        raise ValueError(f"positions have {p.shape[-1]} coordinates, at most {MAX_VARS} supported")
    if p.shape[-1] < MAX_VARS:
        p = torch.cat([p, p.new_zeros(*p.shape[:-1], MAX_VARS - p.shape[-1])], dim=-1)
    return p


class SharedDecoder(nn.Module):
    """Operator feature -> numerical feature through ``h`` parallel maps summed after tanh."""

    def __init__(self, op_dim: int, num_dim: int, width: int, h: int):
        super().__init__()
        self.maps = nn.ModuleList(nn.Linear(op_dim, width, dtype=DTYPE) for _ in range(h))
        self.out = nn.Linear(width, num_dim, dtype=DTYPE)

    def forward(self, f):
        return self.out(sum(torch.tanh(m(f)) for m in self.maps))


class NumericalDecoder(nn.Module):
    """Set encoder over (positional feature, value) pairs -> numerical feature."""

    def __init__(self, num_dim: int, model_dim: int, heads: int):
        super().__init__()
        self.embed = nn.Linear(num_dim + 1, model_dim, dtype=DTYPE)
        self.sab = AttentionLayer(model_dim, heads)
        self.pool = PoolByAttention(model_dim, heads)
        self.out = nn.Linear(model_dim, num_dim, dtype=DTYPE)

    def forward(self, pos_feat, values):
        x = torch.tanh(self.embed(torch.cat([pos_feat, values[..., None]], dim=-1)))
        x = self.sab(x)
        return self.out(self.pool(x)[..., 0, :])


class JudgmentNet(nn.Module):
    """Basic operator features plus the target feature -> edge logits over the matrix labels."""

    def __init__(self, op_dim: int, model_dim: int, heads: int, layers: int):
        super().__init__()
        n_var = SIZE - N_KINDS
        self.var_tokens = nn.Parameter(torch.randn(n_var, op_dim, dtype=DTYPE) / math.sqrt(op_dim))
        self.type_embed = nn.Parameter(torch.zeros(3, model_dim, dtype=DTYPE))
        self.proj = nn.Linear(op_dim, model_dim, dtype=DTYPE)
        self.layers = nn.ModuleList(AttentionLayer(model_dim, heads) for _ in range(layers))
        self.bilinear = nn.Parameter(torch.randn(model_dim, model_dim, dtype=DTYPE) / model_dim)
        self.bias = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def forward(self, basic, target):
        # basic (N_KINDS, op_dim), target (..., op_dim)
        lead = target.shape[:-1]
        toks = torch.cat([basic, self.var_tokens], dim=0).expand(*lead, SIZE, basic.shape[-1])
        x = torch.cat([toks, target[..., None, :]], dim=-2)
        x = self.proj(x)
        role = torch.tensor([0] * N_KINDS + [1] * (SIZE - N_KINDS) + [2])
        x = x + self.type_embed[role]
        for layer in self.layers:
            x = layer(x)
        h = x[..., :SIZE, :]
        return h @ self.bilinear @ h.transpose(-1, -2) + self.bias


class OperatorNet(nn.Module):
    def __init__(self, hp: HyperParams, kinds=ALL_KINDS):
        super().__init__()
        self.hp = hp
        self.kinds = tuple(sorted(kinds))
        self.trunk = DenseNet(hp.spec(MAX_VARS, hp.num_dim))
        self.encoders = nn.ModuleDict({
            str(k): DenseNet(hp.spec(hp.branch_samples * (2 if k in BINARY else 1), hp.op_dim))
            for k in self.kinds
        })
        self.decoder = SharedDecoder(hp.op_dim, hp.num_dim, hp.width, hp.decoder_maps)
        self.numerical = NumericalDecoder(hp.num_dim, hp.model_dim, hp.heads)
        self.inverse = DenseNet(hp.spec(hp.num_dim, hp.op_dim))
        self.judge = JudgmentNet(hp.op_dim, hp.model_dim, hp.heads, hp.attention_layers)
        self.register_buffer("basic", torch.zeros(len(self.kinds), hp.op_dim, dtype=DTYPE))
        self.curves: dict[str, list[float]] = {}

    # -- forward path
    def encoder(self, kind: int) -> DenseNet:
        if kind not in self.kinds:
            raise KeyError(f"no encoder for kind {kind}")
        return self.encoders[str(kind)]

    def operator_feature(self, kind: int, fn_samples) -> torch.Tensor:
        x = torch.as_tensor(fn_samples, dtype=DTYPE)
        want = self.hp.branch_samples * (2 if kind in BINARY else 1)
        if x.shape[-1] != want:
            raise ValueError(f"kind {kind} expects {want} function samples, got {x.shape[-1]}")
        return self.encoder(kind)(x)

    def branch(self, kind: int, fn_samples) -> torch.Tensor:
        return self.decoder(self.operator_feature(kind, fn_samples))

    def trunk_features(self, positions) -> torch.Tensor:
        return self.trunk(pad_positions(positions) if not torch.is_tensor(positions) else positions)

    def deeponet(self, kind: int, fn_samples, positions) -> torch.Tensor:
        b = self.branch(kind, fn_samples)
        t = self.trunk_features(positions)
        return (t * b[..., None, :]).sum(-1)

    # -- backward path
    def numerical_decode(self, positions, values) -> torch.Tensor:
        v = torch.as_tensor(np.asarray(values, dtype=float), dtype=DTYPE) if not torch.is_tensor(values) else values
        if v.shape[-1] == 0:
            raise ValueError("empty sample set")
        t = self.trunk_features(positions)
        if t.shape[-2] != v.shape[-1]:
            raise ValueError("positions and values differ in length")
        return self.numerical(t, v)

    def invert(self, num_feat) -> torch.Tensor:
        return self.inverse(torch.as_tensor(num_feat, dtype=DTYPE))

    def target_feature(self, positions, values) -> torch.Tensor:
        return self.invert(self.numerical_decode(positions, values))

    def judge_logits(self, target, basic=None) -> torch.Tensor:
        basic = self.basic if basic is None else basic
        if basic.shape != (N_KINDS, self.hp.op_dim):
            raise ValueError(f"need {N_KINDS} basic features of width {self.hp.op_dim}")
        if target.shape[-1] != self.hp.op_dim:
            raise ValueError(f"target feature must have width {self.hp.op_dim}")
        return self.judge(basic, target)


@dataclass
class FeatureVec:
    role: str  # "operator" | "numerical" | "positional"
    values: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return int(self.values.shape[-1])


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def deeponet_forward(model: OperatorNet, kind: int, fn_samples, positions) -> np.ndarray:
    with torch.no_grad():
        return _np(model.deeponet(kind, fn_samples, positions))


def extract_operator_feature(model: OperatorNet, kind: int, fn_samples) -> FeatureVec:
    with torch.no_grad():
        return FeatureVec("operator", _np(model.operator_feature(kind, fn_samples)))


def trunk_feature(model: OperatorNet, positions) -> FeatureVec:
    with torch.no_grad():
        return FeatureVec("positional", _np(model.trunk_features(positions)))


def numerical_decode(model: OperatorNet, positions, values) -> FeatureVec:
    if len(values) == 0:
        raise ValueError("empty sample set")
    with torch.no_grad():
        return FeatureVec("numerical", _np(model.numerical_decode(positions, values)))


def invert_feature(model: OperatorNet, num_feat: FeatureVec) -> FeatureVec:
    if num_feat.dim != model.hp.num_dim:
        raise ValueError(f"numerical feature must have width {model.hp.num_dim}")
    with torch.no_grad():
        return FeatureVec("operator", _np(model.invert(num_feat.values)))


def judge_adjacency(model: OperatorNet, basic_feats, target_feat: FeatureVec) -> np.ndarray:
    """Edge probabilities over the matrix labels."""
    basic = torch.as_tensor(np.stack([np.asarray(getattr(f, "values", f), dtype=float) for f in basic_feats]),
                            dtype=DTYPE)
    with torch.no_grad():
        logits = model.judge_logits(torch.as_tensor(target_feat.values, dtype=DTYPE), basic)
        return _np(torch.sigmoid(logits))


def binarize(probs: np.ndarray, threshold: float = 0.5) -> AdjacencyMatrix:
    """Edges where the probability is strictly above ``threshold``; ties give no edge."""
    return AdjacencyMatrix(np.asarray(probs) > threshold)


def predict_matrix(model: OperatorNet, X, y, threshold: float | None = None) -> AdjacencyMatrix:
    """Backward inference: data -> numerical feature -> operator feature -> adjacency matrix."""
    with torch.no_grad():
        target = model.target_feature(X, y)
        probs = torch.sigmoid(model.judge_logits(target))
    return binarize(_np(probs), model.hp.threshold if threshold is None else threshold)
