"""Normal forms, skeletons, character length and numeric equivalence."""

from __future__ import annotations

import itertools
import math
from typing import Optional

import numpy as np
from scipy.stats import qmc

from . import nodes as n
from .evaluate import evaluate_array
from .nodes import Expr, Hole, Num, Op, Slot, Var
from .operators import ADD, INV, MUL, N_KINDS, POW, ROOT, SCALE, SHIFT, EvalDomain
from .parser import parse

_SUMMY = (ADD, SHIFT)


class _Fresh:
    def __init__(self, e: Expr):
        ids = n.slot_ids(e)
        self._it = itertools.count(max(ids, default=0) + 1)

    def __call__(self) -> Slot:
        return Slot(next(self._it))


def _strip_holes(e: Expr) -> Expr:
    if isinstance(e, Op):
        if n.is_holder(e):
            return n.scale(_strip_holes(e.args[0]), e.consts[0])
        return Op(e.kind, tuple(_strip_holes(a) for a in e.args), e.consts)
    if isinstance(e, Hole):
        return Num(0.0)
    return e


def _sort_key(e: Expr) -> tuple:
    if isinstance(e, Op):
        k = e.kind
    elif isinstance(e, Var):
        k = N_KINDS + e.index
    else:
        k = 0
    return (k, n.to_text(_blank_slots(e)), n.to_text(e))


def _blank_slots(e: Expr) -> Expr:
    # slot ids must not influence ordering, otherwise renumbering would reshuffle terms
    return n.map_consts(e, lambda c: Slot(0) if isinstance(c, Slot) else c)


def _is_zero(c) -> bool:
    return isinstance(c, Num) and c.value == 0.0


class _Canon:
    def __init__(self, e: Expr, family: bool = False):
        self.fresh = _Fresh(e)
        self.family = family

    def cmul(self, a, b):
        if isinstance(a, Num) and isinstance(b, Num):
            return Num(a.value * b.value)
        if _is_zero(a) or _is_zero(b):
            return Num(0.0)
        if a == n.ONE:
            return b
        if b == n.ONE:
            return a
        return self.fresh()

    def cadd(self, a, b):
        if isinstance(a, Num) and isinstance(b, Num):
            return Num(a.value + b.value)
        if _is_zero(a):
            return b
        if _is_zero(b):
            return a
        return self.fresh()

    def factors(self, e: Expr) -> tuple:
        if isinstance(e, Num) or isinstance(e, Slot):
            return e, []
        if isinstance(e, Var):
            return (e.coef or n.ONE), [Var(e.index)]
        if isinstance(e, Op) and e.kind == MUL:
            c1, f1 = self.factors(e.args[0])
            c2, f2 = self.factors(e.args[1])
            return self.cmul(self.cmul(e.consts[0], c1), c2), f1 + f2
        if isinstance(e, Op) and e.kind == SCALE:
            c, f = self.factors(e.args[0])
            return self.cmul(e.consts[0], c), f
        y = self.core(e)
        if isinstance(y, (Num, Slot, Var)) or (isinstance(y, Op) and y.kind in (MUL, SCALE)):
            return self.factors(y)
        return n.ONE, [y]

    def terms(self, e: Expr) -> tuple:
        """Flatten a sum into ``([(coef, term)], constant)``."""
        if isinstance(e, Op) and e.kind == ADD:
            t1, k1 = self.terms(e.args[0])
            t2, k2 = self.terms(e.args[1])
            c = e.consts[0]
            t1 = [(self.cmul(c, a), t) for a, t in t1]
            return t1 + t2, self.cadd(self.cmul(c, k1), k2)
        if isinstance(e, Op) and e.kind == SHIFT:
            t, k = self.terms(e.args[0])
            return t, self.cadd(k, e.consts[0])
        coef, fs = self.factors(e)
        if not fs:
            return [], coef
        if len(fs) == 1 and isinstance(fs[0], Op) and fs[0].kind in _SUMMY:
            t, k = self.terms(fs[0])
            return [(self.cmul(coef, a), x) for a, x in t], self.cmul(coef, k)
        fs = sorted(fs, key=_sort_key)
        prod = fs[0]
        for f in fs[1:]:
            prod = Op(MUL, (prod, f), (n.ONE,))
        return [(coef, prod)], Num(0.0)

    def core(self, e: Expr) -> Expr:
        if isinstance(e, (Num, Slot, Var)):
            return e
        if isinstance(e, Hole):
            return Num(0.0)
        if e.kind in (ADD, MUL, SHIFT, SCALE):
            return self.rebuild_sum(*self.terms(e))
        u = self.core(e.args[0])
        if e.kind == INV:
            return n.inv(u) if not (isinstance(u, Num) and u.value == 0.0) else Op(INV, (u,))
        if e.kind in (POW, ROOT):
            c = e.consts[0]
            if isinstance(u, Num) and isinstance(c, Num):
                return Num(u.value ** c.value)
            return Op(e.kind, (u,), (c,))
        try:
            return n.unary(e.kind, u)
        except (ValueError, OverflowError):
            return Op(e.kind, (u,))

    def rebuild_sum(self, terms, const) -> Expr:
        merged: dict[str, list] = {}
        for coef, t in terms:
            key = n.to_text(t)
            if key in merged:
                merged[key][0] = self.cadd(merged[key][0], coef)
            else:
                merged[key] = [coef, t]
        items = [(c, t) for c, t in merged.values() if not (isinstance(c, Num) and c.value == 0.0)]
        items.sort(key=lambda ct: _sort_key(ct[1]))
        if self.family:
            # every term gets its own amplitude and any constant term is free
            items = [(self.fresh(), t) for _, t in items]
            if not _is_zero(const):
                const = self.fresh()
        out = None
        for coef, t in items:
            term = _mul_out(t, coef)
            out = term if out is None else n.add(out, term)
        if out is None:
            return const
        return n.shift(out, const)


def _mul_out(prod: Expr, coef) -> Expr:
    # rebuild the factor chain through the constructors so leaf coefficients fold
    if isinstance(prod, Op) and prod.kind == MUL and prod.consts[0] == n.ONE:
        return n.scale(n.mul(_mul_out(prod.args[0], n.ONE), prod.args[1]), coef)
    return n.scale(prod, coef)


def _step(e: Expr, family: bool = False) -> Expr:
    core = _Canon(e, family).core(_strip_holes(e))
    return n.renumber_slots(parse(n.to_text(core)))


def canonicalize(e: Expr, family: bool = False) -> Expr:
    """Deterministic normal form.

    Sums and products are flattened and their members sorted by
    (kind index, text); numeric constants are folded; nested coefficients
    collapse into one.  Placeholders are dropped.  Slots are renumbered in
    walk order, so two skeletons that differ only in slot ids compare equal.

    With ``family`` every sum term is given a free amplitude, which is the
    form used to compare skeletons as families of functions.
    """
    cur = e
    for _ in range(8):
        nxt = _step(cur, family)
        if nxt == cur:
            return nxt
        cur = nxt
    return cur


def skeletonize(e: Expr, keep_integer_exponents: bool = True) -> Expr:
    """Replace numeric constants by fresh slots; bare variables become ``c*x_i``.

    Integer exponents of ``pow`` are structural and kept by default.
    """
    counter = itertools.count(1)

    def fresh():
        return Slot(next(counter))

    def keep(kind, c) -> bool:
        return keep_integer_exponents and kind == POW and isinstance(c, Num) and c.value.is_integer()

    # constants before children, matching the walk order of nodes.walk
    def go(x: Expr) -> Expr:
        if isinstance(x, (Num, Slot)):
            return fresh()
        if isinstance(x, Var):
            return Var(x.index, fresh())
        if isinstance(x, Hole):
            return x
        consts = tuple(c if keep(x.kind, c) else fresh() for c in x.consts)
        return Op(x.kind, tuple(go(a) for a in x.args), consts)

    return go(e)


def skeleton_key(e: Expr) -> str:
    """Text identifying the skeleton family of ``e``.

    Every constant position becomes free, so ``sin(x_1)+x_1`` and
    ``c1*sin(c2*x_1)+c3*x_1`` share a key.
    """
    cur = canonicalize(skeletonize(e), family=True)
    for _ in range(4):
        nxt = canonicalize(skeletonize(cur), family=True)
        if nxt == cur:
            break
        cur = nxt
    return n.to_text(cur)


def char_length(e: Expr) -> int:
    text = n.to_text(canonicalize(e))
    return sum(1 for ch in text if not ch.isspace())


def sample_union(u: np.ndarray, intervals) -> np.ndarray:
    """Map uniform draws in [0, 1) onto a union of intervals by arc length."""
    lengths = np.array([hi - lo for lo, hi in intervals], dtype=float)
    edges = np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum()
    out = np.empty_like(u, dtype=float)
    for j, (lo, hi) in enumerate(intervals):
        mask = (u >= edges[j]) & ((u < edges[j + 1]) if j < len(intervals) - 1 else True)
        frac = (u[mask] - edges[j]) / (edges[j + 1] - edges[j])
        out[mask] = lo + frac * (hi - lo)
    return out


def domain_points(domain: EvalDomain, count: int, seed: int = 0) -> np.ndarray:
    """Scrambled Sobol points spread over the domain (unions respected)."""
    d = domain.n_vars
    sampler = qmc.Sobol(d, scramble=True, seed=seed)
    m = max(1, math.ceil(math.log2(max(count, 1))))
    u = sampler.random_base2(m)[:count]
    return np.column_stack([sample_union(u[:, j], domain.ranges[j]) for j in range(d)])


def numeric_equivalent(a: Expr, b: Expr, domain: EvalDomain, n_points: int = 1000,
                       tol: float = 1e-9, seed: int = 0) -> Optional[bool]:
    """Whether ``a`` and ``b`` agree on quasi-random domain points.

    Points where either side violates an operator range are skipped.
    Returns None (indeterminate) when more than half the points are skipped.
    """
    X = domain_points(domain, n_points, seed)
    va = evaluate_array(a, X, domain=domain)
    vb = evaluate_array(b, X, domain=domain)
    ok = np.isfinite(va) & np.isfinite(vb)
    if ok.sum() * 2 < len(X) or not ok.any():
        return None
    diff = np.abs(va[ok] - vb[ok])
    return bool(np.all(diff <= tol * (1.0 + np.abs(vb[ok]))))
