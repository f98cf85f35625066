"""Real and complex evaluation, plus vectorised evaluation with constant gradients."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .nodes import Expr, Hole, Num, Op, Slot, Var
from .operators import (
    ADD, COS, EXP, INV, LOG, MUL, POW, ROOT, SCALE, SHIFT, SIN,
    DomainViolation, EvalDomain, Thresholds, in_range,
)


class UnboundSlot(LookupError):
    pass


def _point_value(point, i: int) -> float:
    if isinstance(point, Mapping):
        return point[i]
    return point[i - 1]


def _const(c, consts) -> float:
    if isinstance(c, Num):
        return c.value
    try:
        return consts[c.id]
    except (KeyError, TypeError):
        raise UnboundSlot(f"slot c{c.id} is not bound") from None


def evaluate(e: Expr, point, domain: EvalDomain | None = None, consts: Mapping[int, float] | None = None) -> float:
    """Value of ``e`` at ``point`` (mapping var index -> value, or a sequence for x_1, x_2...).

    Raises DomainViolation when an operator input leaves its range.
    """
    th = domain.thresholds if domain is not None else Thresholds()

    def ev(node) -> float:
        if isinstance(node, Num):
            return node.value
        if isinstance(node, Slot):
            return _const(node, consts)
        if isinstance(node, Var):
            x = float(_point_value(point, node.index))
            return x if node.coef is None else _const(node.coef, consts) * x
        if isinstance(node, Hole):
            raise ValueError("placeholder outside an add/mul node")
        k = node.kind
        if k in (ADD, MUL):
            c = _const(node.consts[0], consts)
            a = ev(node.args[0])
            if isinstance(node.args[1], Hole):
                return c * a
            b = ev(node.args[1])
            return c * a + b if k == ADD else c * a * b
        u = ev(node.args[0])
        c = _const(node.consts[0], consts) if node.consts else None
        if not in_range(k, u, th, c):
            raise DomainViolation(k, u)
        if k == INV:
            return 1.0 / u
        if k == SIN:
            return math.sin(u)
        if k == COS:
            return math.cos(u)
        if k == EXP:
            return math.exp(u)
        if k == LOG:
            return math.log(u)
        if k in (POW, ROOT):
            if u == 0.0 and c <= 0:
                raise DomainViolation(k, u)
            return u ** c
        if k == SHIFT:
            return u + c
        return u * c

    return ev(e)


def evaluate_complex(e: Expr, point, consts: Mapping[int, float] | None = None) -> complex:
    """Complex evaluation without range guards; principal branches throughout.

    Division by an exact zero raises ZeroDivisionError.
    """

    def ev(node) -> complex:
        if isinstance(node, Num):
            return complex(node.value)
        if isinstance(node, Slot):
            return complex(_const(node, consts))
        if isinstance(node, Var):
            x = complex(_point_value(point, node.index))
            return x if node.coef is None else _const(node.coef, consts) * x
        if isinstance(node, Hole):
            raise ValueError("placeholder outside an add/mul node")
        k = node.kind
        if k in (ADD, MUL):
            c = _const(node.consts[0], consts)
            a = ev(node.args[0])
            if isinstance(node.args[1], Hole):
                return c * a
            b = ev(node.args[1])
            return c * a + b if k == ADD else c * a * b
        u = ev(node.args[0])
        if k == INV:
            return 1.0 / u
        if k == SIN:
            return cmath.sin(u)
        if k == COS:
            return cmath.cos(u)
        if k == EXP:
            return cmath.exp(u)
        if k == LOG:
            return cmath.log(u)
        c = _const(node.consts[0], consts)
        if k in (POW, ROOT):
            if u == 0:
                if c > 0:
                    return 0j
                raise ZeroDivisionError("zero to a non-positive power")
            return u ** c
        if k == SHIFT:
            return u + c
        return u * c

    return ev(e)


# ---------------------------------------------------------------------------
# vectorised evaluation with forward-mode constant gradients


class Compiled:
    """``e`` compiled for repeated evaluation over a sample matrix.

    ``free`` lists the slot ids forming the parameter vector; ``fixed`` binds
    the remaining slots.  Calling returns ``(values, jacobian)`` where the
    jacobian has shape ``(n_points, len(free))``.  In real mode, points where
    a guard is violated come back as NaN.
    """

    def __init__(self, e: Expr, free: Sequence[int] = (), fixed: Mapping[int, float] | None = None,
                 complex_mode: bool = False, thresholds: Thresholds | None = None):
        self.expr = e
        self.free = list(free)
        self.index = {sid: i for i, sid in enumerate(self.free)}
        self.fixed = dict(fixed or {})
        self.complex_mode = complex_mode
        self.th = thresholds or Thresholds()
        self._fn = self._compile(e)

    @property
    def n_params(self) -> int:
        return len(self.free)

    def __call__(self, X: np.ndarray, theta: np.ndarray | None = None, need_grad: bool = True):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        theta = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
        dtype = complex if self.complex_mode else float
        with np.errstate(all="ignore"):
            v, J = self._fn(X, theta, need_grad)
        n = X.shape[0]
        v = np.broadcast_to(np.asarray(v, dtype=dtype), (n,)).copy()
        if not need_grad:
            return v, None
        if J is None:
            J = np.zeros((n, self.n_params), dtype=dtype)
        else:
            J = np.broadcast_to(J, (n, self.n_params)).astype(dtype, copy=True)
        return v, J

    def _const(self, c):
        """Returns (value-getter, onehot-or-None)."""
        if isinstance(c, Num):
            val = c.value
            return (lambda theta: val), None
        if c.id in self.index:
            i = self.index[c.id]
            onehot = np.zeros(len(self.free))
            onehot[i] = 1.0
            return (lambda theta: theta[i]), onehot
        if c.id in self.fixed:
            val = self.fixed[c.id]
            return (lambda theta: val), None
        raise UnboundSlot(f"slot c{c.id} is neither free nor fixed")

    def _compile(self, node):
        cm = self.complex_mode
        th = self.th
        if isinstance(node, (Num, Slot)):
            get, d = self._const(node)
            return lambda X, t, g: (get(t), None if d is None else d[None, :])
        if isinstance(node, Var):
            j = node.index - 1
            if node.coef is None:
                return lambda X, t, g: (X[:, j], None)
            get, d = self._const(node.coef)
            if d is None:
                return lambda X, t, g: (get(t) * X[:, j], None)
            return lambda X, t, g: (get(t) * X[:, j], X[:, j][:, None] * d[None, :] if g else None)
        if isinstance(node, Hole):
            raise ValueError("placeholder outside an add/mul node")

        k = node.kind
        if k in (ADD, MUL):
            get, d = self._const(node.consts[0])
            fa = self._compile(node.args[0])
            if isinstance(node.args[1], Hole):
                def holder(X, t, g):
                    a, Ja = fa(X, t, g)
                    c = get(t)
                    return c * a, _lin(g, (c, Ja), (a, d))
                return holder
            fb = self._compile(node.args[1])
            if k == ADD:
                def f_add(X, t, g):
                    a, Ja = fa(X, t, g)
                    b, Jb = fb(X, t, g)
                    c = get(t)
                    return c * a + b, _lin(g, (c, Ja), (1.0, Jb), (a, d))
                return f_add

            def f_mul(X, t, g):
                a, Ja = fa(X, t, g)
                b, Jb = fb(X, t, g)
                c = get(t)
                return c * a * b, _lin(g, (c * b, Ja), (c * a, Jb), (a * b, d))
            return f_mul

        fu = self._compile(node.args[0])
        if node.consts:
            get, d = self._const(node.consts[0])
        else:
            get, d = None, None

        def guard(bad, v):
            if cm or not np.any(bad):
                return v
            v = np.array(np.broadcast_to(v, np.shape(bad)), dtype=float)
            v[bad] = np.nan
            return v

        if k == INV:
            def f_inv(X, t, g):
                u, Ju = fu(X, t, g)
                v = 1.0 / u
                if not cm:
                    v = guard(np.abs(u) < th.inv_min, v)
                return v, _lin(g, (-v * v, Ju))
            return f_inv
        if k == SIN:
            def f_sin(X, t, g):
                u, Ju = fu(X, t, g)
                return np.sin(u), _lin(g, (np.cos(u), Ju))
            return f_sin
        if k == COS:
            def f_cos(X, t, g):
                u, Ju = fu(X, t, g)
                return np.cos(u), _lin(g, (-np.sin(u), Ju))
            return f_cos
        if k == EXP:
            def f_exp(X, t, g):
                u, Ju = fu(X, t, g)
                v = np.exp(u)
                if not cm:
                    v = guard(np.abs(u) > th.exp_max, v)
                return v, _lin(g, (v, Ju))
            return f_exp
        if k == LOG:
            def f_log(X, t, g):
                u, Ju = fu(X, t, g)
                if cm:
                    v = np.log(u + 0j)
                else:
                    v = guard(u < th.log_min, np.log(u))
                return v, _lin(g, (1.0 / u, Ju))
            return f_log
        if k in (POW, ROOT):
            def f_pow(X, t, g):
                u, Ju = fu(X, t, g)
                c = get(t)
                if cm:
                    u = np.asarray(u, dtype=complex)
                    v = np.where(u == 0, 0j if np.real(c) > 0 else np.nan, np.power(np.where(u == 0, 1, u), c))
                    logu = np.log(np.where(u == 0, 1, u))
                else:
                    v = np.power(u, c)
                    bad = (u < 0) & (float(c) != np.floor(c)) if k == POW else (u < 0)
                    if k == POW:
                        bad = bad | (np.abs(u) > th.pow_max)
                    v = guard(bad, v)
                    logu = np.log(np.abs(u)) if d is not None else None
                if not g:
                    return v, None
                du = c * np.power(u, c - 1) if Ju is not None else None
                return v, _lin(g, (du, Ju), (None if d is None else v * logu, d))
            return f_pow
        if k == SHIFT:
            def f_shift(X, t, g):
                u, Ju = fu(X, t, g)
                return u + get(t), _lin(g, (1.0, Ju), (1.0, d))
            return f_shift
        if k == SCALE:
            def f_scale(X, t, g):
                u, Ju = fu(X, t, g)
                c = get(t)
                return u * c, _lin(g, (c, Ju), (u, d))
            return f_scale
        raise ValueError(f"unsupported kind {k}")


def _lin(g: bool, *terms):
    """Sum of ``coef[:, None] * J`` over terms whose jacobian is present."""
    if not g:
        return None
    out = None
    for coef, J in terms:
        if J is None:
            continue
        c = np.asarray(coef)
        part = J * (c[:, None] if c.ndim == 1 else c)
        out = part if out is None else out + part
    return out


def evaluate_array(e: Expr, X: np.ndarray, consts: Mapping[int, float] | None = None,
                   domain: EvalDomain | None = None, complex_mode: bool = False) -> np.ndarray:
    """Vectorised value of ``e`` over the rows of ``X``; guard violations give NaN."""
    th = domain.thresholds if domain is not None else None
    comp = Compiled(e, (), consts or {}, complex_mode=complex_mode, thresholds=th)
    return comp(X, need_grad=False)[0]


@dataclass
class ConstGradient:
    grad: dict[int, float]
    fallback: bool


def _near_boundary(e: Expr, point, consts, th: Thresholds, rtol: float = 1e-9) -> bool:
    """Whether any guarded operator input sits on (or within rtol of) its range edge."""
    hit = False

    def visit(node):
        nonlocal hit
        if not isinstance(node, Op):
            return
        for a in node.args:
            visit(a)
        if node.kind in (INV, EXP, LOG, POW, ROOT):
            u = evaluate(node.args[0], point, EvalDomain(thresholds=th), consts)
            edges = {
                INV: (th.inv_min, -th.inv_min),
                EXP: (th.exp_max, -th.exp_max),
                LOG: (th.log_min,),
                POW: (th.pow_max, -th.pow_max),
                ROOT: (0.0,),
            }[node.kind]
            if any(abs(u - b) <= rtol * max(1.0, abs(b)) for b in edges):
                hit = True

    visit(e)
    return hit


def differentiate_constants(e: Expr, point, consts: Mapping[int, float],
                            domain: EvalDomain | None = None) -> ConstGradient:
    """Analytic gradient of ``e`` with respect to each slot at one point.

    ``fallback`` is set when the point sits on a guard boundary or the
    analytic derivative is not finite; callers should then use finite
    differences instead.
    """
    from .nodes import slot_ids

    th = domain.thresholds if domain is not None else Thresholds()
    evaluate(e, point, domain, consts)  # propagates DomainViolation
    ids = slot_ids(e)
    comp = Compiled(e, ids, {}, thresholds=th)
    n_vars = max([1] + [v for v in _var_indices(e)])
    x = np.array([[float(_point_value(point, i)) for i in range(1, n_vars + 1)]])
    theta = np.array([consts[i] for i in ids])
    _, J = comp(x, theta)
    grad = {sid: float(J[0, j]) for j, sid in enumerate(ids)}
    fallback = (not all(math.isfinite(g) for g in grad.values())) or _near_boundary(e, point, consts, th)
    return ConstGradient(grad, fallback)


def _var_indices(e: Expr):
    from .nodes import variables

    return variables(e)


def fd_gradient(e: Expr, point, consts: Mapping[int, float], step: float = 1e-6,
                domain: EvalDomain | None = None) -> dict[int, float]:
    """Central finite-difference gradient over the slots of ``e``."""
    from .nodes import slot_ids

    out = {}
    for sid in slot_ids(e):
        hi = dict(consts)
        lo = dict(consts)
        hi[sid] += step
        lo[sid] -= step
        out[sid] = (evaluate(e, point, domain, hi) - evaluate(e, point, domain, lo)) / (2 * step)
    return out
