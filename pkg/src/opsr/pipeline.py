"""Matrix -> skeleton search -> constant fitting -> recovery verdict."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .constopt.fitting import (
    R2_THRESHOLD, Dataset, FitResult, OptConfig, bound_expression, failed_fit,
    fit_constants, integer_exponent_sweep, recovery_check, select_strategy, _seed_seq,
)
from .expr.canonical import canonicalize
from .expr.nodes import Expr, to_text
from .expr.operators import EvalDomain
from .opgraph import AdjacencyMatrix
from .search import SearchConfig, SkeletonCandidate, expand_placeholder, search


@dataclass
class Scored:
    candidate: SkeletonCandidate
    fit: FitResult
    recovered: bool

    @property
    def expression(self) -> Expr:
        return canonicalize(bound_expression(self.candidate, self.fit))

    def summary(self) -> dict:
        return {
            "skeleton": self.candidate.text,
            "expression": to_text(self.expression) if math.isfinite(self.fit.r2) else None,
            "round": self.candidate.round,
            **self.fit.to_dict(),
            "recovered": self.recovered,
        }


@dataclass
class SolveResult:
    ranked: list[Scored] = field(default_factory=list)
    n_candidates: int = 0
    elapsed_s: float = 0.0
    timed_out: bool = False

    @property
    def best(self) -> Optional[Scored]:
        return self.ranked[0] if self.ranked else None

    @property
    def recovered(self) -> bool:
        return bool(self.ranked) and self.ranked[0].recovered


@dataclass(frozen=True)
class SolveConfig:
    search: SearchConfig = SearchConfig()
    opt: OptConfig = OptConfig()
    expand_top: int = 5
    time_limit_s: Optional[float] = None
    keep: int = 20


def fit_candidate(cand: SkeletonCandidate, data: Dataset, domain: EvalDomain | None, n_vars: int,
                  cfg: OptConfig, seed) -> FitResult:
    """Fit with the strategy chosen for the skeleton; integer traversal falls back to the complex objective."""
    strategy = select_strategy(cand, n_vars, cfg=cfg)
    if strategy == "bfgs":
        return fit_constants(cand, data, domain, cfg, seed)
    if strategy == "integer":
        res = integer_exponent_sweep(cand, data, domain, cfg, seed, n_vars=n_vars)
        if res.r2 > R2_THRESHOLD:
            return res
        alt = fit_constants(cand, data, domain, cfg, _seed_seq(seed, 99), complex_mode=True)
        return alt if alt.r2 > res.r2 else res
    return fit_constants(cand, data, domain, cfg, seed, complex_mode=True)


def _rank_key(s: Scored):
    r2 = s.fit.r2 if math.isfinite(s.fit.r2) else -math.inf
    return (not s.recovered, -r2)


def solve(matrix: AdjacencyMatrix, data: Dataset, n_vars: int, domain: EvalDomain | None = None,
          label: Expr | None = None, cfg: SolveConfig = SolveConfig(), seed=0) -> SolveResult:
    """Search ``matrix``, fit every candidate, stop at the first recovery.

    Without a ``label`` a candidate counts as recovered on R² alone.
    Placeholder expansion continues from the ``expand_top`` best-scoring
    candidates of the previous round.
    """
    start = time.perf_counter()
    out = SolveResult()
    scored: list[Scored] = []
    base = replace(cfg.search, max_expansions=0)
    seen: set[str] = set()

    def over_time() -> bool:
        return cfg.time_limit_s is not None and time.perf_counter() - start > cfg.time_limit_s

    def run(cands) -> tuple[list[Scored], bool]:
        batch = []
        for cand in cands:
            if over_time():
                out.timed_out = True
                return batch, False
            key = to_text(canonicalize(cand.expr))
            if key in seen:
                continue
            seen.add(key)
            idx = out.n_candidates
            out.n_candidates += 1
            try:
                fit = fit_candidate(cand, data, domain, n_vars, cfg.opt, _seed_seq(seed, idx))
            except (ArithmeticError, ValueError, OverflowError, np.linalg.LinAlgError):
                fit = failed_fit("error", ("fit-error",))
            if label is not None and domain is not None:
                ok = recovery_check(fit, cand, label, domain, cfg=cfg.opt)
            else:
                ok = fit.r2 > R2_THRESHOLD
            fit = replace(fit, recovered=ok)
            s = Scored(cand, fit, ok)
            batch.append(s)
            if ok:
                return batch, True
        return batch, False

    batch, done = run(search(matrix, base))
    scored += batch
    rnd = 0
    while not done and not out.timed_out and rnd < cfg.search.max_expansions and not cfg.search.strict:
        rnd += 1
        parents = sorted((s for s in batch if s.candidate.n_holes > 0), key=_rank_key)[: cfg.expand_top]
        children = []
        for p in parents:
            for c in expand_placeholder(p.candidate, matrix, cfg.search):
                children.append(replace(c, round=rnd))
        if not children:
            break
        batch, done = run(children[: cfg.search.max_candidates_per_round])
        scored += batch
    scored.sort(key=_rank_key)
    out.ranked = scored[: cfg.keep]
    out.elapsed_s = time.perf_counter() - start
    return out
