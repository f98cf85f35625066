"""Expression nodes, normalising constructors and the text serialiser.

The constructors (``add``, ``mul``, ``pow_`` ...) fold numeric constants into
the constant positions of the operator forms, so ``0.5*x_1`` becomes a leaf
``Var(1, Num(0.5))`` and ``x_1+1`` becomes a ``shift`` node.  The parser builds
every tree through them, which is what makes ``parse(to_text(e)) == e`` hold
for parsed and canonical trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Union

from .operators import (
    ADD, COS, EXP, INV, KINDS, LOG, MUL, POW, ROOT, SCALE, SHIFT, SIN,
)


@dataclass(frozen=True)
class Num:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Slot:
    """A free constant, bound at fit time."""

    id: int


@dataclass(frozen=True)
class Hole:
    """Placeholder for a term that may be added later; acts as the identity."""


@dataclass(frozen=True)
class Var:
    index: int
    coef: Union[Num, Slot, None] = None


@dataclass(frozen=True)
class Op:
    kind: int
    args: tuple
    consts: tuple = ()

    def __post_init__(self):
        spec = KINDS.get(self.kind)
        if spec is None:
            raise ValueError(f"unknown operator kind {self.kind}")
        if len(self.args) != spec.arity:
            raise ValueError(f"kind {self.kind} takes {spec.arity} children, got {len(self.args)}")
        if len(self.consts) != spec.n_consts:
            raise ValueError(f"kind {self.kind} takes {spec.n_consts} constants, got {len(self.consts)}")


Const = Union[Num, Slot]
Expr = Union[Num, Slot, Hole, Var, Op]

ONE = Num(1.0)


def is_const(e) -> bool:
    return isinstance(e, (Num, Slot))


def is_holder(e) -> bool:
    """An add/mul node whose second child is a placeholder."""
    return isinstance(e, Op) and e.kind in (ADD, MUL) and isinstance(e.args[1], Hole)


# ---------------------------------------------------------------------------
# normalising constructors


def _cmul(a: Const, b: Const) -> Const | None:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if a == ONE:
        return b
    if b == ONE:
        return a
    return None


def _split_coef(e: Expr) -> tuple[Const, Expr]:
    if isinstance(e, Var) and e.coef is not None:
        return e.coef, Var(e.index)
    if isinstance(e, Op) and e.kind == MUL:
        return e.consts[0], Op(MUL, e.args, (ONE,))
    if isinstance(e, Op) and e.kind == SCALE:
        return e.consts[0], e.args[0]
    return ONE, e


def scale(e: Expr, k: Const) -> Expr:
    if k == ONE:
        return e
    if isinstance(e, Num) and isinstance(k, Num):
        return Num(e.value * k.value)
    if isinstance(e, Var):
        new = _cmul(e.coef or ONE, k)
        if new is not None:
            return Var(e.index, None if new == ONE else new)
    elif isinstance(e, Op) and e.kind in (MUL, SCALE):
        new = _cmul(e.consts[0], k)
        if new is not None:
            if e.kind == SCALE and new == ONE:
                return e.args[0]
            return Op(e.kind, e.args, (new,))
    return Op(SCALE, (e,), (k,))


def shift(u: Expr, c: Const) -> Expr:
    if isinstance(c, Num) and c.value == 0.0:
        return u
    if isinstance(u, Num) and isinstance(c, Num):
        return Num(u.value + c.value)
    if isinstance(u, Op) and u.kind == SHIFT and isinstance(u.consts[0], Num) and isinstance(c, Num):
        return shift(u.args[0], Num(u.consts[0].value + c.value))
    return Op(SHIFT, (u,), (c,))


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if is_const(b):
        return shift(a, b)
    if is_const(a):
        return shift(b, a)
    if isinstance(a, Op) and a.kind == SHIFT:
        return shift(add(a.args[0], b), a.consts[0])
    if isinstance(b, Op) and b.kind == SHIFT:
        return shift(add(a, b.args[0]), b.consts[0])
    if isinstance(a, Op) and a.kind == SCALE:
        return Op(ADD, (a.args[0], b), a.consts)
    if isinstance(b, Op) and b.kind == SCALE:
        return Op(ADD, (b.args[0], a), b.consts)
    return Op(ADD, (a, b), (ONE,))


def _absorbs(e: Expr) -> bool:
    return isinstance(e, (Num, Slot, Var)) or (isinstance(e, Op) and e.kind in (MUL, SCALE))


def neg(e: Expr) -> Expr:
    return scale(e, Num(-1.0))


def sub(a: Expr, b: Expr) -> Expr:
    if _absorbs(b) or is_const(a) or (isinstance(a, Op) and a.kind == SHIFT) or isinstance(b, Hole):
        return add(a, neg(b))
    return Op(ADD, (b, a), (Num(-1.0),))


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if is_const(a):
        return scale(b, a)
    if is_const(b):
        return scale(a, b)
    ka, ca = _split_coef(a)
    kb, cb = _split_coef(b)
    k = _cmul(ka, kb)
    if k is None:
        return Op(MUL, (a, b), (ONE,))
    return Op(MUL, (ca, cb), (k,))


def inv(u: Expr) -> Expr:
    if isinstance(u, Num):
        # 1/0 stays symbolic; evaluation reports it as a domain violation
        return Op(INV, (u,)) if u.value == 0.0 else Num(1.0 / u.value)
    if isinstance(u, Op) and u.kind == INV:
        return u.args[0]
    return Op(INV, (u,))


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Num) and b.value != 0.0:
        return scale(a, Num(1.0 / b.value)) if not isinstance(a, Num) else Num(a.value / b.value)
    return mul(a, inv(b))


_FOLD = {SIN: math.sin, COS: math.cos, EXP: math.exp, LOG: math.log}


def _fold(fn, *args) -> Num | None:
    """Constant-fold, or None when the result is undefined or not real."""
    try:
        v = fn(*args)
    except (ValueError, OverflowError, ZeroDivisionError):
        return None
    if isinstance(v, complex) or not math.isfinite(v):
        return None
    return Num(v)


def unary(kind: int, u: Expr) -> Expr:
    if isinstance(u, Num) and kind in _FOLD:
        folded = _fold(_FOLD[kind], u.value)
        if folded is not None:
            return folded
    return Op(kind, (u,))


def pow_(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Num):
        c = b.value
        if isinstance(a, Num):
            folded = _fold(pow, a.value, c)
            if folded is not None:
                return folded
        if c == 1.0:
            return a
        if c == 0.0:
            return ONE
        if c < 0:
            return inv(pow_(a, Num(-c)))
        return Op(POW if c > 1 else ROOT, (a,), (b,))
    if isinstance(b, Slot):
        return Op(POW, (a,), (b,))
    # variable exponent: a^b = exp(b*log(a))
    return unary(EXP, mul(b, unary(LOG, a)))


def root(a: Expr, c: Expr) -> Expr:
    if not is_const(c):
        raise ValueError("root exponent must be a constant")
    return Op(ROOT, (a,), (c,))


# ---------------------------------------------------------------------------
# traversal helpers


def walk(e: Expr) -> Iterator[Expr]:
    """Preorder walk, visiting leaf coefficients and operator constants."""
    yield e
    if isinstance(e, Var):
        if e.coef is not None:
            yield e.coef
    elif isinstance(e, Op):
        for c in e.consts:
            yield c
        for a in e.args:
            yield from walk(a)


def slot_ids(e: Expr) -> list[int]:
    seen: dict[int, None] = {}
    for n in walk(e):
        if isinstance(n, Slot):
            seen.setdefault(n.id)
    return list(seen)


def exponent_slot_ids(e: Expr, kind: int = POW) -> list[int]:
    out: dict[int, None] = {}
    for n in walk(e):
        if isinstance(n, Op) and n.kind == kind and isinstance(n.consts[0], Slot):
            out.setdefault(n.consts[0].id)
    return list(out)


def has_holes(e: Expr) -> bool:
    return any(isinstance(n, Hole) for n in walk(e))


def variables(e: Expr) -> set[int]:
    return {n.index for n in walk(e) if isinstance(n, Var)}


def map_consts(e: Expr, fn) -> Expr:
    """Rebuild ``e`` applying ``fn`` to every Num/Slot in a constant position or leaf."""
    if isinstance(e, (Num, Slot)):
        return fn(e)
    if isinstance(e, Var):
        return Var(e.index, None if e.coef is None else fn(e.coef))
    if isinstance(e, Op):
        return Op(e.kind, tuple(map_consts(a, fn) for a in e.args), tuple(fn(c) for c in e.consts))
    return e


def bind(e: Expr, values: dict[int, float]) -> Expr:
    """Replace slots by numbers; slots missing from ``values`` stay free."""
    return map_consts(e, lambda c: Num(values[c.id]) if isinstance(c, Slot) and c.id in values else c)


def renumber_slots(e: Expr, start: int = 1) -> Expr:
    ids = {old: start + i for i, old in enumerate(slot_ids(e))}
    return map_consts(e, lambda c: Slot(ids[c.id]) if isinstance(c, Slot) else c)


def height(e: Expr) -> int:
    """Node levels on the longest root-to-leaf path; placeholder holders are transparent."""
    if isinstance(e, Op):
        if is_holder(e):
            return height(e.args[0])
        return 1 + max(height(a) for a in e.args if not isinstance(a, Hole))
    return 1


# ---------------------------------------------------------------------------
# serialisation

HOLE_TEXT = "⟨hole⟩"

_SUM, _PROD, _ATOM = 1, 2, 3


def fmt_num(v: float) -> str:
    if math.isfinite(v) and v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _const_text(c: Const) -> str:
    return fmt_num(c.value) if isinstance(c, Num) else f"c{c.id}"


def _wrap(e: Expr, min_prec: int) -> str:
    text, prec = _render(e)
    return f"({text})" if prec < min_prec else text


def _join_sum(left: str, right: str) -> str:
    return f"{left}{right}" if right.startswith("-") else f"{left}+{right}"


def _render(e: Expr) -> tuple[str, int]:
    if isinstance(e, Num):
        return fmt_num(e.value), _ATOM
    if isinstance(e, Slot):
        return f"c{e.id}", _ATOM
    if isinstance(e, Hole):
        return HOLE_TEXT, _ATOM
    if isinstance(e, Var):
        name = f"x_{e.index}"
        if e.coef is None:
            return name, _ATOM
        if e.coef == Num(-1.0):
            return f"-{name}", _PROD
        return f"{_const_text(e.coef)}*{name}", _PROD
    k = e.kind
    c = e.consts[0] if e.consts else None
    if k == ADD:
        u1, u2 = e.args
        if c == ONE:
            return _join_sum(_wrap(u1, _SUM), _wrap(u2, _PROD)), _SUM
        if c == Num(-1.0) and not _absorbs(u1):
            return f"{_wrap(u2, _SUM)}-{_wrap(u1, _PROD)}", _SUM
        return _join_sum(f"{_const_text(c)}*{_wrap(u1, _ATOM)}", _wrap(u2, _PROD)), _SUM
    if k == MUL:
        u1, u2 = e.args
        if isinstance(u2, Op) and u2.kind == INV:
            body = f"{_wrap(u1, _PROD)}/{_wrap(u2.args[0], _ATOM)}"
        else:
            body = f"{_wrap(u1, _PROD)}*{_wrap(u2, _ATOM)}"
        if c == ONE:
            return body, _PROD
        if c == Num(-1.0):
            return f"-{body}", _PROD
        return f"{_const_text(c)}*{body}", _PROD
    if k == SHIFT:
        body = _wrap(e.args[0], _SUM)
        if isinstance(c, Num) and c.value < 0:
            return f"{body}-{fmt_num(-c.value)}", _SUM
        return f"{body}+{_const_text(c)}", _SUM
    if k == SCALE:
        if c == Num(-1.0):
            return f"-{_wrap(e.args[0], _ATOM)}", _PROD
        return f"{_const_text(c)}*{_wrap(e.args[0], _ATOM)}", _PROD
    if k == POW:
        return f"pow({_render(e.args[0])[0]},{_const_text(c)})", _ATOM
    if k == ROOT:
        if c == Num(0.5):
            return f"sqrt({_render(e.args[0])[0]})", _ATOM
        if isinstance(c, Num):
            return f"pow({_render(e.args[0])[0]},{_const_text(c)})", _ATOM
        return f"root({_render(e.args[0])[0]},{_const_text(c)})", _ATOM
    return f"{KINDS[k].name}({_render(e.args[0])[0]})", _ATOM


def to_text(e: Expr) -> str:
    return _render(e)[0]
