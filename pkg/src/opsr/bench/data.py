"""Benchmark files: loading, serialisation and dataset sampling."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from ..constopt.fitting import Dataset
from ..expr.canonical import char_length, sample_union
from ..expr.evaluate import evaluate_array
from ..expr.nodes import Expr, variables
from ..expr.operators import EvalDomain, Interval
from ..expr.parser import ParseError, parse

BUILTIN_SETS = ("univariate", "bivariate")


class BenchmarkFormatError(ValueError):
    def __init__(self, message: str, line: int, path: str = "<text>"):
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class Benchmark:
    name: str
    label_text: str
    ranges: tuple[tuple[Interval, ...], ...]

    @cached_property
    def label(self) -> Expr:
        return parse(self.label_text)

    @property
    def n_vars(self) -> int:
        return len(self.ranges)

    @property
    def domain(self) -> EvalDomain:
        return EvalDomain(self.ranges)

    @property
    def length(self) -> int:
        return char_length(self.label)


_INTERVAL = re.compile(r"^\s*([-+]?[\d.eE+-]+)\s*,\s*([-+]?[\d.eE+-]+)\s*$")


def parse_ranges(text: str) -> tuple[tuple[Interval, ...], ...]:
    """``"(-1,1);(-2,-0.1 and 0.1,2)"`` -> per-variable interval unions."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not (part.startswith("(") and part.endswith(")")):
            raise ValueError(f"range {part!r} must be parenthesised")
        ivs = []
        for piece in part[1:-1].split(" and "):
            m = _INTERVAL.match(piece)
            if m is None:
                raise ValueError(f"bad interval {piece.strip()!r}")
            lo, hi = float(m.group(1)), float(m.group(2))
            if not lo < hi:
                raise ValueError(f"empty interval ({lo}, {hi})")
            ivs.append((lo, hi))
        out.append(tuple(ivs))
    return tuple(out)


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def format_ranges(ranges) -> str:
    return ";".join("(" + " and ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in r) + ")" for r in ranges)


def parse_benchmarks(text: str, path: str = "<text>") -> list[Benchmark]:
    out: list[Benchmark] = []
    seen: set[str] = set()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise BenchmarkFormatError(f"expected 3 tab-separated fields, got {len(cols)}", no, path)
        name, label, rng = (c.strip() for c in cols)
        if not name:
            raise BenchmarkFormatError("empty name", no, path)
        if name in seen:
            raise BenchmarkFormatError(f"duplicate name {name!r}", no, path)
        try:
            expr = parse(label)
        except ParseError as err:
            raise BenchmarkFormatError(f"label: {err}", no, path) from None
        try:
            ranges = parse_ranges(rng)
        except ValueError as err:
            raise BenchmarkFormatError(f"ranges: {err}", no, path) from None
        used = variables(expr)
        if used and max(used) > len(ranges):
            raise BenchmarkFormatError(f"label uses x_{max(used)} but only {len(ranges)} range(s) given", no, path)
        seen.add(name)
        out.append(Benchmark(name, label, ranges))
    return out


def load_benchmarks(path) -> list[Benchmark]:
    """Read a benchmark file (name, label, ranges separated by tabs)."""
    p = Path(path)
    return parse_benchmarks(p.read_text(encoding="utf-8"), str(p))


def serialize_benchmarks(benchmarks) -> str:
    lines = ["# name\texpression\tranges"]
    lines += [f"{b.name}\t{b.label_text}\t{format_ranges(b.ranges)}" for b in benchmarks]
    return "\n".join(lines) + "\n"


def builtin_path(name: str) -> Path:
    if name not in BUILTIN_SETS and name != "reference_results":
        raise KeyError(f"unknown built-in set {name!r}; choose from {BUILTIN_SETS}")
    ext = "csv" if name == "reference_results" else "tsv"
    return Path(str(resources.files(__package__).joinpath("data", f"{name}.{ext}")))


def load_builtin(name: str) -> list[Benchmark]:
    return load_benchmarks(builtin_path(name))


def resolve_benchmarks(spec: str) -> list[Benchmark]:
    """A built-in set name or a file path."""
    return load_builtin(spec) if spec in BUILTIN_SETS else load_benchmarks(spec)


def sample_dataset(b: Benchmark, n: int = 1000, seed=0, max_rounds: int = 50) -> Dataset:
    """``n`` uniform points inside the benchmark ranges where the label is defined.

    Points at which the label leaves an operator's guarded range are
    redrawn, so every returned target value is finite.
    """
    rng = np.random.default_rng(seed)
    dom = b.domain
    Xs: list[np.ndarray] = []
    have = 0
    for _ in range(max_rounds):
        if have >= n:
            break
        want = max(n - have, 1)
        X = np.column_stack([sample_union(rng.random(want), r) for r in b.ranges])
        y = evaluate_array(b.label, X, domain=dom)
        keep = np.isfinite(y)
        Xs.append(X[keep])
        have += int(keep.sum())
    if have < n:
        raise ValueError(f"{b.name}: label undefined on most of its range ({have}/{n} points)")
    X = np.concatenate(Xs)[:n] if Xs else np.empty((0, b.n_vars))
    X = X.reshape(n, b.n_vars)
    y = evaluate_array(b.label, X, domain=dom) if n else np.empty(0)
    return Dataset(X, y)


def load_reference_results(path=None) -> list[dict]:
    """Published per-benchmark results of the compared methods, one dict per cell pair."""
    p = Path(path) if path else builtin_path("reference_results")
    rows = []
    with p.open(newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            r2 = r["r2"]
            rows.append({
                "name": r["name"], "set": r["set"], "method": r["method"],
                "r2": None if r2 in ("", "None") else float(r2),
                "recovery": float(r["recovery"]),
            })
    return rows

