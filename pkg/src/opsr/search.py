"""Breadth-first decoding of an adjacency matrix into candidate skeletons.

Trees are grown from the ranked root kinds.  A node of kind ``k`` may take
as input any kind in row ``k`` of the matrix; variable leaves are ``c*x_i``
and end a branch.  Every add/mul node carries a placeholder so one more term
can be attached later.  Enumeration is lazy and height-ordered, so shallow
trees come out first and nothing deeper than needed is built.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np

from .expr.canonical import canonicalize
from .expr.nodes import Expr, Hole, Num, Op, Slot, Var, is_holder, to_text
from .expr.operators import (
    ADD, INV, KINDS, MUL, N_KINDS, RESTRICTED_CLASSES, SCALE, SHIFT,
)
from .opgraph import AdjacencyMatrix, index_kind, kind_index, root_tiers, var_index

# these never nest directly in themselves: sums and products grow through
# placeholders, and inv/shift/scale collapse
_NO_SELF = (ADD, MUL, INV, SHIFT, SCALE)


@dataclass(frozen=True)
class SearchConfig:
    max_expansions: int = 2
    add_mul_self_limit: int = 3
    max_candidates_per_round: int = 200
    max_depth: int = 8
    strict: bool = False
    cross_nesting: bool = False
    classes: tuple[tuple[int, str], ...] = tuple(sorted(RESTRICTED_CLASSES.items()))
    expansion_max_height: int = 3
    max_work: int = 200_000

    def __post_init__(self):
        if self.max_expansions < 0:
            raise ValueError("max_expansions must be >= 0")
        for name in ("add_mul_self_limit", "max_candidates_per_round", "max_depth", "expansion_max_height"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def class_of(self) -> dict[int, str]:
        return dict(self.classes)


@dataclass(frozen=True)
class SkeletonCandidate:
    expr: Expr
    root_kind: int
    round: int = 0
    expansions: int = 0

    @property
    def n_holes(self) -> int:
        return _count_holes(self.expr)

    @property
    def text(self) -> str:
        return to_text(self.expr)


def _count_holes(e: Expr) -> int:
    if isinstance(e, Hole):
        return 1
    if isinstance(e, Op):
        return sum(_count_holes(a) for a in e.args)
    return 0


# ---------------------------------------------------------------------------
# nesting rules


def check_nesting(path: Iterable[int], cfg: SearchConfig = SearchConfig()) -> bool:
    """Whether a root-to-leaf kind sequence obeys the nesting restrictions.

    A restricted-class kind may not appear below another member of its class
    (with ``cross_nesting`` an intervening add/mul lifts the ban).  add and
    mul may each occur at most ``add_mul_self_limit`` times on the path.
    """
    classes = cfg.class_of
    seen: set[str] = set()
    counts = {ADD: 0, MUL: 0}
    for k in path:
        if k in counts:
            counts[k] += 1
            if counts[k] > cfg.add_mul_self_limit:
                return False
            if cfg.cross_nesting:
                seen = set()
        cls = classes.get(k)
        if cls is not None:
            if cls in seen:
                return False
            seen.add(cls)
    return True


@dataclass(frozen=True)
class _Ctx:
    classes: frozenset = frozenset()
    n_add: int = 0
    n_mul: int = 0
    parent: int = 0

    def enter(self, k: int, cfg: SearchConfig) -> "_Ctx":
        classes = self.classes
        if k in (ADD, MUL) and cfg.cross_nesting:
            classes = frozenset()
        cls = cfg.class_of.get(k)
        if cls is not None:
            classes = classes | {cls}
        return _Ctx(classes, self.n_add + (k == ADD), self.n_mul + (k == MUL), k)

    def allows(self, k: int, cfg: SearchConfig) -> bool:
        if k == self.parent and k in _NO_SELF:
            return False
        if cfg.class_of.get(k) in self.classes:
            return False
        if k == ADD and self.n_add + 1 > cfg.add_mul_self_limit:
            return False
        if k == MUL and self.n_mul + 1 > cfg.add_mul_self_limit:
            return False
        return True


def kind_paths(e: Expr) -> list[list[int]]:
    """Root-to-leaf operator kind sequences, with placeholder holders and same-kind sum/product chains merged."""
    out: list[list[int]] = []

    def go(node, path, parent):
        if isinstance(node, Op):
            if is_holder(node) or (node.kind == parent and node.kind in (ADD, MUL)):
                here = path
            else:
                here = path + [node.kind]
            kids = [a for a in node.args if not isinstance(a, Hole)]
            for a in kids:
                go(a, here, node.kind)
        elif isinstance(node, Var):
            out.append(path)

    go(e, [], 0)
    return out


# ---------------------------------------------------------------------------
# lazy sequences


class _Lazy:
    """A generator whose produced items are cached for repeated traversal."""

    __slots__ = ("_it", "_buf")

    def __init__(self, it: Iterator):
        self._it = it
        self._buf: list = []

    def get(self, i: int):
        while len(self._buf) <= i:
            if self._it is None:
                raise IndexError(i)
            try:
                self._buf.append(next(self._it))
            except StopIteration:
                self._it = None
                raise IndexError(i) from None
        return self._buf[i]

    def __iter__(self):
        i = 0
        while True:
            try:
                yield self.get(i)
            except IndexError:
                return
            i += 1


class _WorkExceeded(Exception):
    pass


class _Grower:
    """Enumerates subtrees allowed by one matrix under one configuration."""

    def __init__(self, m: AdjacencyMatrix, cfg: SearchConfig, fallback: bool):
        self.m = m
        self.cfg = cfg
        self.work = 0
        a = m.array
        self.rows: dict[int, list[int]] = {}
        used_vars = [i for i in range(N_KINDS, a.shape[0]) if a[:, i].any()]
        init_vars = used_vars or [var_index(1)]
        for k in range(1, N_KINDS + 1):
            row = [int(j) for j in np.nonzero(a[kind_index(k)])[0]]
            if not row and fallback:
                row = list(init_vars)
            self.rows[k] = row
        self._exact: dict = {}
        self._upto: dict = {}
        self._feasible: dict = {}

    def _tick(self):
        self.work += 1
        if self.work > self.cfg.max_work:
            raise _WorkExceeded

    def child_kinds(self, k: int, ctx: _Ctx) -> list[tuple[str, int]]:
        """Input kinds a kind-``k`` node may take when it sits in context ``ctx``."""
        inner = ctx.enter(k, self.cfg)
        out = []
        for j in self.rows[k]:
            tag, val = index_kind(j)
            if tag == "op" and not inner.allows(val, self.cfg):
                continue
            if k in (ADD, MUL) and tag == "op" and val == SCALE:
                # operand coefficients come from the add/mul constants
                continue
            out.append((tag, val))
        return out

    def feasible(self, k: int, ctx: _Ctx, h: int) -> bool:
        """Whether a tree of kind ``k`` with height exactly ``h`` exists."""
        key = (k, ctx, h)
        if key in self._feasible:
            return self._feasible[key]
        res = False
        if h >= 2:
            inner = ctx.enter(k, self.cfg)
            for tag, val in self.child_kinds(k, ctx):
                if tag == "var":
                    res = h == 2
                else:
                    res = self.feasible(val, inner, h - 1)
                if res:
                    break
        self._feasible[key] = res
        return res

    def exact(self, k: int, ctx: _Ctx, h: int) -> _Lazy:
        key = (k, ctx, h)
        seq = self._exact.get(key)
        if seq is None:
            seq = _Lazy(self._gen_exact(k, ctx, h) if self.feasible(k, ctx, h) else iter(()))
            self._exact[key] = seq
        return seq

    def options(self, k: int, ctx: _Ctx, h: int) -> _Lazy:
        """Inputs of a kind-``k`` node with height exactly ``h``, in kind order."""
        key = ("opt", k, ctx, h)
        seq = self._upto.get(key)
        if seq is None:
            seq = _Lazy(self._gen_options(k, ctx, h))
            self._upto[key] = seq
        return seq

    def _gen_options(self, k, ctx, h):
        inner = ctx.enter(k, self.cfg)
        for tag, val in self.child_kinds(k, ctx):
            if tag == "var":
                if h == 1:
                    yield Var(val, Slot(0))
            elif h >= 2:
                yield from self.exact(val, inner, h)

    def upto(self, k, ctx, h):
        for hh in range(1, h + 1):
            yield from self.options(k, ctx, hh)

    def _gen_exact(self, k, ctx, h):
        spec = KINDS[k]
        consts = tuple(Slot(0) for _ in range(spec.n_consts))
        if spec.arity == 1:
            for child in self.options(k, ctx, h - 1):
                self._tick()
                yield Op(k, (child,), consts)
            return
        hold_c = Slot(0) if k == ADD else Num(1.0)
        for b in self.options(k, ctx, h - 1):
            for a in self.upto(k, ctx, h - 2):
                self._tick()
                yield Op(k, (a, Op(k, (b, Hole()), (hold_c,))), consts)
            for a in self.options(k, ctx, h - 1):
                self._tick()
                yield Op(k, (a, Op(k, (b, Hole()), (hold_c,))), consts)
                if a is b:
                    break


def number_slots(e: Expr, start: int = 1) -> Expr:
    """Give every slot occurrence its own id, in walk order."""
    counter = itertools.count(start)

    def go(x):
        if isinstance(x, Slot):
            return Slot(next(counter))
        if isinstance(x, Var):
            return Var(x.index, None if x.coef is None else go(x.coef))
        if isinstance(x, Op):
            consts = tuple(go(c) for c in x.consts)
            return Op(x.kind, tuple(go(a) for a in x.args), consts)
        return x

    return go(e)


def _dedup_key(e: Expr, cfg: SearchConfig | None = None) -> str:
    # strict mode emits round 0 only, where exact text already separates the
    # enumerated trees; the canonical form is needed once expansions reorder terms
    if cfg is not None and cfg.strict:
        return to_text(e)
    return to_text(canonicalize(e))


def _round_zero(m: AdjacencyMatrix, cfg: SearchConfig) -> Iterator[SkeletonCandidate]:
    tiers = root_tiers(m)
    roots = (tiers[0] + tiers[1]) or tiers[2]
    if not roots:
        return
    g = _Grower(m, cfg, fallback=not cfg.strict)
    top = _Ctx()
    try:
        for h in range(2, cfg.max_depth + 1):
            # round-robin over roots at each height, tier order preserved
            iters = [iter(g.exact(k, top, h)) for k in roots]
            active = list(zip(roots, iters))
            while active:
                nxt = []
                for k, it in active:
                    e = next(it, None)
                    if e is None:
                        continue
                    nxt.append((k, it))
                    yield SkeletonCandidate(number_slots(e), k, 0, 0)
                active = nxt
    except _WorkExceeded:
        return


def _hole_sites(e: Expr):
    """Yield (path-of-arg-indices, holder kind, kind path above the holder) for each placeholder."""

    def go(node, trail, kpath, parent):
        if not isinstance(node, Op):
            return
        if is_holder(node):
            yield trail, node.kind, kpath
            yield from go(node.args[0], trail + (0,), kpath, node.kind)
            return
        merged = node.kind == parent and node.kind in (ADD, MUL)
        here = kpath if merged else kpath + (node.kind,)
        for i, a in enumerate(node.args):
            yield from go(a, trail + (i,), here, node.kind)

    yield from go(e, (), (), 0)


def _replace_at(e: Expr, trail: tuple, fn) -> Expr:
    if not trail:
        return fn(e)
    args = list(e.args)
    args[trail[0]] = _replace_at(args[trail[0]], trail[1:], fn)
    return Op(e.kind, tuple(args), e.consts)


def _ctx_of(kpath: tuple, cfg: SearchConfig) -> _Ctx:
    ctx = _Ctx()
    for k in kpath[:-1]:
        ctx = ctx.enter(k, cfg)
    return ctx


def expand_placeholder(s: SkeletonCandidate, m: AdjacencyMatrix, cfg: SearchConfig = SearchConfig(),
                       limit: Optional[int] = None) -> list[SkeletonCandidate]:
    """Attach one more term at a placeholder of ``s``.

    Each result fills exactly one placeholder with an independently searched
    subterm (plus a fresh placeholder behind it).  Returns ``[]`` once
    ``s.expansions`` reaches ``cfg.max_expansions``.
    """
    sites = list(_hole_sites(s.expr))
    if not sites:
        raise ValueError("candidate has no placeholder to expand")
    if s.expansions >= cfg.max_expansions or cfg.strict:
        return []
    limit = cfg.max_candidates_per_round if limit is None else limit
    g = _Grower(m, cfg, fallback=True)
    out: list[SkeletonCandidate] = []
    seen: set[str] = set()
    try:
        for trail, hk, kpath in sites:
            ctx = _ctx_of(kpath, cfg)
            hold_c = Slot(0) if hk == ADD else Num(1.0)
            for term in g.upto(hk, ctx, cfg.expansion_max_height):
                new_holder = Op(hk, (term, Hole()), (hold_c,))

                def fill(holder, new=new_holder):
                    return Op(holder.kind, (holder.args[0], new), holder.consts)

                e = _replace_at(s.expr, trail, fill)
                e = number_slots(e)
                key = _dedup_key(e)
                if key in seen:
                    continue
                seen.add(key)
                out.append(SkeletonCandidate(e, s.root_kind, s.round + 1, s.expansions + 1))
                if len(out) >= limit:
                    return out
    except _WorkExceeded:
        pass
    return out


def search(m: AdjacencyMatrix, cfg: SearchConfig = SearchConfig()) -> Iterator[SkeletonCandidate]:
    """Deterministic lazy stream of candidate skeletons for ``m``.

    Round 0 enumerates trees by increasing height, cycling through the root
    kinds; each later round expands the placeholders of the previous round's
    candidates.  Each round holds at most ``max_candidates_per_round``
    distinct (canonically different) candidates.
    """
    cap = cfg.max_candidates_per_round
    seen: set[str] = set()
    current: list[SkeletonCandidate] = []
    for cand in _round_zero(m, cfg):
        key = _dedup_key(cand.expr, cfg)
        if key in seen:
            continue
        seen.add(key)
        current.append(cand)
        yield cand
        if len(current) >= cap:
            break
    if cfg.strict:
        return
    for r in range(1, cfg.max_expansions + 1):
        nxt: list[SkeletonCandidate] = []
        for cand in current:
            if cand.n_holes == 0:
                continue
            for new in expand_placeholder(cand, m, cfg, limit=cap - len(nxt)):
                key = _dedup_key(new.expr)
                if key in seen:
                    continue
                seen.add(key)
                new = replace(new, round=r)
                nxt.append(new)
                yield new
                if len(nxt) >= cap:
                    break
            if len(nxt) >= cap:
                break
        if not nxt:
            return
        current = nxt
