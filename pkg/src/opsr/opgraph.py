"""Kind-level operator graphs and their adjacency-matrix encoding.

Rows and columns follow a fixed label order: the eleven operator kinds
followed by the variable kinds ``x_1``, ``x_2``.  Entry ``[x, y]`` is set when
some operator of kind ``x`` takes an input whose head has kind ``y``.
Nested sums (and nested products) collapse into one n-ary node, so
``a+b+c`` gives the edges ``add->a, add->b, add->c`` and no ``add->add``.
A scale applied directly to a summand or factor is treated as that
operand's coefficient, so ``2*a+3*b`` and ``3*b+2*a`` encode alike.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .expr.nodes import Expr, Hole, Num, Op, Slot, Var, is_holder
from .expr.operators import ADD, KINDS, MAX_VARS, MUL, N_KINDS, SCALE, var_label

LABELS: tuple[str, ...] = tuple(KINDS[k].name for k in range(1, N_KINDS + 1)) + tuple(
    var_label(i) for i in range(1, MAX_VARS + 1)
)
SIZE = len(LABELS)


def kind_index(kind: int) -> int:
    return kind - 1


def var_index(i: int) -> int:
    return N_KINDS + i - 1


def index_kind(idx: int) -> tuple[str, int]:
    """``("op", kind)`` or ``("var", variable index)`` for a matrix position."""
    if idx < N_KINDS:
        return "op", idx + 1
    return "var", idx - N_KINDS + 1


class AdjacencyMatrix:
    """Immutable boolean kind-by-kind matrix."""

    __slots__ = ("_m",)

    def __init__(self, matrix=None):
        m = np.zeros((SIZE, SIZE), dtype=bool) if matrix is None else np.array(matrix, dtype=bool)
        if m.shape != (SIZE, SIZE):
            raise ValueError(f"matrix must be {SIZE}x{SIZE}, got {m.shape}")
        m.setflags(write=False)
        self._m = m

    @property
    def array(self) -> np.ndarray:
        return self._m

    def __getitem__(self, ij) -> bool:
        return bool(self._m[ij])

    def __eq__(self, other) -> bool:
        return isinstance(other, AdjacencyMatrix) and bool(np.array_equal(self._m, other._m))

    def __hash__(self) -> int:
        return hash(self._m.tobytes())

    def __repr__(self) -> str:
        names = ", ".join(f"{LABELS[i]}->{LABELS[j]}" for i, j in sorted(self.edges()))
        return f"AdjacencyMatrix({{{names}}})"

    def edges(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in zip(*np.nonzero(self._m))}

    def named_edges(self) -> set[tuple[str, str]]:
        return {(LABELS[i], LABELS[j]) for i, j in self.edges()}

    def flipped(self, i: int, j: int) -> "AdjacencyMatrix":
        m = self._m.copy()
        m[i, j] = not m[i, j]
        return AdjacencyMatrix(m)

    def to_json(self) -> str:
        rows = [[int(v) for v in row] for row in self._m]
        body = ",\n".join("    " + json.dumps(r) for r in rows)
        return "{\n  \"labels\": " + json.dumps(list(LABELS)) + ",\n  \"matrix\": [\n" + body + "\n  ]\n}\n"

    @classmethod
    def from_json(cls, text: str) -> "AdjacencyMatrix":
        obj = json.loads(text)
        if tuple(obj.get("labels", ())) != LABELS:
            raise ValueError(f"unexpected labels {obj.get('labels')!r}")
        return cls(obj["matrix"])

    @classmethod
    def from_edges(cls, edges) -> "AdjacencyMatrix":
        m = np.zeros((SIZE, SIZE), dtype=bool)
        for x, y in edges:
            i = LABELS.index(x) if isinstance(x, str) else x
            j = LABELS.index(y) if isinstance(y, str) else y
            m[i, j] = True
        return cls(m)


def _is_coefficient(node: Expr, parent_kind: int) -> bool:
    # a scale sitting directly in a sum or product only rescales that operand,
    # which the add/mul constants already express
    return isinstance(node, Op) and node.kind == SCALE and parent_kind in (ADD, MUL)


def _heads(child: Expr, parent_kind: int) -> set[int]:
    if isinstance(child, (Num, Slot, Hole)):
        return set()
    if isinstance(child, Var):
        if not 1 <= child.index <= MAX_VARS:
            raise ValueError(f"variable x_{child.index} outside the supported range")
        return {var_index(child.index)}
    if not isinstance(child, Op):
        raise TypeError(f"unsupported node {child!r}")
    if is_holder(child) or _is_coefficient(child, parent_kind):
        return _heads(child.args[0], parent_kind)
    if child.kind == parent_kind and parent_kind in (ADD, MUL):
        out: set[int] = set()
        for a in child.args:
            out |= _heads(a, parent_kind)
        return out
    return {kind_index(child.kind)}


def encode_expression(e: Expr) -> AdjacencyMatrix:
    """Kind-level adjacency matrix of ``e``."""
    m = np.zeros((SIZE, SIZE), dtype=bool)

    def visit(node: Expr, parent: int) -> None:
        if isinstance(node, Var):
            _heads(node, 0)
            return
        if not isinstance(node, Op):
            if not isinstance(node, (Num, Slot, Hole)):
                raise TypeError(f"unsupported node {node!r}")
            return
        if is_holder(node) or _is_coefficient(node, parent):
            for a in node.args:
                visit(a, parent if not is_holder(node) else node.kind)
            return
        row = kind_index(node.kind)
        for a in node.args:
            for col in _heads(a, node.kind):
                m[row, col] = True
        for a in node.args:
            visit(a, node.kind)

    visit(e, 0)
    return AdjacencyMatrix(m)


@dataclass(frozen=True)
class DegreeProfile:
    out_degree: tuple[int, ...]
    in_degree: tuple[int, ...]

    def out_of(self, label: str) -> int:
        return self.out_degree[LABELS.index(label)]

    def in_of(self, label: str) -> int:
        return self.in_degree[LABELS.index(label)]


def degree_profile(m: AdjacencyMatrix) -> DegreeProfile:
    a = m.array
    return DegreeProfile(tuple(int(v) for v in a.sum(axis=1)), tuple(int(v) for v in a.sum(axis=0)))


def root_tiers(m: AdjacencyMatrix) -> list[list[int]]:
    """Operator kinds grouped by root likelihood.

    Tier 1 has no consumers but consumes something; tier 2 consumes more
    kinds than consume it.  Tier 3 holds the remaining operators that consume
    anything, so a matrix made only of balanced cycles still has a start point.
    """
    p = degree_profile(m)
    tiers: list[list[int]] = [[], [], []]
    for k in range(1, N_KINDS + 1):
        i = kind_index(k)
        out, inn = p.out_degree[i], p.in_degree[i]
        if out == 0:
            continue
        if inn == 0:
            tiers[0].append(k)
        elif out > inn:
            tiers[1].append(k)
        else:
            tiers[2].append(k)
    for t in tiers:
        t.sort(key=lambda k: (-(p.out_degree[kind_index(k)] - p.in_degree[kind_index(k)]), k))
    return tiers


def root_candidates(m: AdjacencyMatrix) -> list[int]:
    """Ranked root kinds; tier 3 is consulted only when tiers 1 and 2 are empty."""
    t1, t2, t3 = root_tiers(m)
    return (t1 + t2) or t3


@dataclass(frozen=True)
class Diagnostic:
    code: str
    labels: tuple[str, ...]

    def __str__(self) -> str:
        return f"{self.code}({', '.join(self.labels)})"


def validate_matrix(m: AdjacencyMatrix) -> list[Diagnostic]:
    """Structural problems that the search has to tolerate."""
    p = degree_profile(m)
    out: list[Diagnostic] = []
    a = m.array
    for i in range(N_KINDS, SIZE):
        if p.out_degree[i]:
            out.append(Diagnostic("variable-row-set", (LABELS[i],)))
    for k in range(1, N_KINDS + 1):
        i = kind_index(k)
        if p.in_degree[i] > 0 and p.out_degree[i] == 0:
            out.append(Diagnostic("dangling-operator", (LABELS[i],)))
    tiers = root_tiers(m)
    if len(tiers[0]) > 1:
        out.append(Diagnostic("multiple-roots", tuple(LABELS[kind_index(k)] for k in tiers[0])))
    starts = tiers[0] or tiers[1] or tiers[2]
    seen = {kind_index(k) for k in starts}
    queue = deque(seen)
    while queue:
        i = queue.popleft()
        for j in np.nonzero(a[i])[0]:
            if int(j) not in seen:
                seen.add(int(j))
                queue.append(int(j))
    used = [i for i in range(SIZE) if p.out_degree[i] or p.in_degree[i]]
    missing = tuple(LABELS[i] for i in used if i not in seen)
    if missing:
        out.append(Diagnostic("unreachable", missing))
    return out
