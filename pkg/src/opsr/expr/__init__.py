from .canonical import canonicalize, char_length, numeric_equivalent, skeletonize
from .evaluate import (
    Compiled, UnboundSlot, differentiate_constants, evaluate, evaluate_array,
    evaluate_complex, fd_gradient,
)
from .nodes import Expr, Hole, Num, Op, Slot, Var, to_text
from .operators import KINDS, DomainViolation, EvalDomain, Thresholds
from .parser import ParseError, parse

__all__ = [
    "Compiled", "DomainViolation", "EvalDomain", "Expr", "Hole", "KINDS", "Num", "Op",
    "ParseError", "Slot", "Thresholds", "UnboundSlot", "Var", "canonicalize", "char_length",
    "differentiate_constants", "evaluate", "evaluate_array", "evaluate_complex",
    "fd_gradient", "numeric_equivalent", "parse", "skeletonize", "to_text",
]
