"""The eleven-operator set and the input-range guards that go with it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

ADD, MUL, INV, SIN, COS, EXP, POW, ROOT, LOG, SHIFT, SCALE = range(1, 12)
N_KINDS = 11
MAX_VARS = 2


@dataclass(frozen=True)
class OperatorKind:
    index: int
    name: str
    arity: int
    n_consts: int
    form: str


KINDS: dict[int, OperatorKind] = {
    k.index: k
    for k in (
        OperatorKind(ADD, "add", 2, 1, "c*u1+u2"),
        OperatorKind(MUL, "mul", 2, 1, "c*u1*u2"),
        OperatorKind(INV, "inv", 1, 0, "u^-1"),
        OperatorKind(SIN, "sin", 1, 0, "sin(u)"),
        OperatorKind(COS, "cos", 1, 0, "cos(u)"),
        OperatorKind(EXP, "exp", 1, 0, "exp(u)"),
        OperatorKind(POW, "pow", 1, 1, "pow(u,c), c>1"),
        OperatorKind(ROOT, "root", 1, 1, "pow(u,c), 0<c<1"),
        OperatorKind(LOG, "log", 1, 0, "log(u)"),
        OperatorKind(SHIFT, "shift", 1, 1, "u+c"),
        OperatorKind(SCALE, "scale", 1, 1, "u*c"),
    )
}

# Same-class nesting is banned below a member of the class.
RESTRICTED_CLASSES: dict[int, str] = {
    SIN: "trig",
    COS: "trig",
    POW: "power",
    ROOT: "power",
    EXP: "exp",
    LOG: "log",
}


def var_label(i: int) -> str:
    return f"x_{i}"


def kind_label(k: int) -> str:
    return KINDS[k].name


@dataclass(frozen=True)
class Thresholds:
    """Values of the threshold ``t`` for the guarded operators."""

    exp_max: float = 20.0
    log_min: float = 1e-6
    inv_min: float = 1e-6
    pow_max: float = 10.0


class DomainViolation(ArithmeticError):
    def __init__(self, kind: int, value):
        self.kind = kind
        self.value = value
        super().__init__(f"{kind_label(kind)} (kind {kind}) input {value!r} outside its range")


def in_range(kind: int, u: float, th: Thresholds, exponent: float | None = None) -> bool:
    """Whether ``u`` lies inside the input range of ``kind``."""
    if kind == INV:
        return abs(u) >= th.inv_min
    if kind == EXP:
        return abs(u) <= th.exp_max
    if kind == POW:
        if abs(u) > th.pow_max:
            return False
        return u >= 0 or exponent is None or float(exponent).is_integer()
    if kind == ROOT:
        return u >= 0
    if kind == LOG:
        return u >= th.log_min
    return math.isfinite(u)


Interval = tuple[float, float]


@dataclass(frozen=True)
class EvalDomain:
    """Per-variable sampling ranges (unions allowed) plus guard thresholds."""

    ranges: tuple[tuple[Interval, ...], ...] = ((( -1.0, 1.0),),)
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        for var_ranges in self.ranges:
            if not var_ranges:
                raise ValueError("empty range for a variable")
            for lo, hi in var_ranges:
                if not lo < hi:
                    raise ValueError(f"empty interval ({lo}, {hi})")

    @property
    def n_vars(self) -> int:
        return len(self.ranges)

    @classmethod
    def box(cls, *ranges: Sequence[Interval] | Interval, thresholds: Thresholds | None = None):
        norm = []
        for r in ranges:
            if isinstance(r[0], (int, float)):
                norm.append(((float(r[0]), float(r[1])),))
            else:
                norm.append(tuple((float(a), float(b)) for a, b in r))
        return cls(tuple(norm), thresholds or Thresholds())
