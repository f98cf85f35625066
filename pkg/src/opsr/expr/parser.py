"""Recursive-descent parser for the benchmark expression notation.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := number | 'pi' | var | slot | hole
            | func '(' expr (',' expr)? ')' | '(' expr ')' | '-' factor
    var    := 'x' '_'? digit+
    slot   := 'c' digit+
    func   := sin | cos | exp | log | sqrt | pow | div | inv | root
"""

from __future__ import annotations

import math
import re

from . import nodes as n
from .operators import COS, EXP, LOG, SIN


class ParseError(ValueError):
    def __init__(self, message: str, pos: int):
        self.pos = pos
        super().__init__(f"{message} at offset {pos}")


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<hole>⟨hole⟩)"
    r"|(?P<op>[-+*/(),])"
    r")"
)
_VAR = re.compile(r"x_?(\d+)$")
_SLOT = re.compile(r"c(\d+)$")

_UNARY = {"sin": SIN, "cos": COS, "exp": EXP, "log": LOG}
_FUNCS = {"sin", "cos", "exp", "log", "sqrt", "pow", "div", "inv", "root"}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "end":
            what = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {what}", pos)

    def expr(self):
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.term()
            left = n.add(left, right) if op == "+" else n.sub(left, right)
        return left

    def term(self):
        left = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            right = self.factor()
            left = n.mul(left, right) if op == "*" else n.div(left, right)
        return left

    def factor(self):
        kind, val, pos = self.take()
        if kind == "num":
            return n.Num(float(val))
        if kind == "hole":
            return n.Hole()
        if kind == "op" and val == "-":
            return n.neg(self.factor())
        if kind == "op" and val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        if kind == "name":
            if val == "pi":
                return n.Num(math.pi)
            m = _VAR.match(val)
            if m:
                idx = int(m.group(1))
                if idx < 1:
                    raise ParseError(f"variable index must be >= 1 in {val!r}", pos)
                return n.Var(idx)
            m = _SLOT.match(val)
            if m:
                return n.Slot(int(m.group(1)))
            if val in _FUNCS:
                return self.call(val, pos)
            raise ParseError(f"unknown identifier {val!r}", pos)
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", pos)

    def call(self, name: str, pos: int):
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            args.append(self.expr())
        self.expect(")")
        want = 2 if name in ("pow", "div", "root") else 1
        if len(args) != want:
            raise ParseError(f"{name} takes {want} argument(s), got {len(args)}", pos)
        try:
            if name in _UNARY:
                return n.unary(_UNARY[name], args[0])
            if name == "sqrt":
                return n.pow_(args[0], n.Num(0.5))
            if name == "inv":
                return n.inv(args[0])
            if name == "div":
                return n.div(args[0], args[1])
            if name == "root":
                return n.root(args[0], args[1])
            return n.pow_(args[0], args[1])
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise ParseError(f"cannot build {name}: {exc}", pos) from exc


def parse(text: str) -> n.Expr:
    """Parse ``text`` into an expression tree.

    >>> from opsr.expr.nodes import to_text
    >>> to_text(parse("pow(x_1,3) + pow(x_1,2) + x_1"))
    'pow(x_1,3)+pow(x_1,2)+x_1'
    """
    p = _Parser(text)
    try:
        tree = p.expr()
    except (ZeroDivisionError, OverflowError) as exc:
        raise ParseError(str(exc), p.peek()[2]) from exc
    kind, val, pos = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected {val!r}", pos)
    return tree
