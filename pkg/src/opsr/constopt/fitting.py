"""Constant fitting for skeletons: restarts, strategies, scoring and the recovery verdict."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from ..expr.canonical import numeric_equivalent
from ..expr.evaluate import Compiled
from ..expr.nodes import Expr, Num, Op, Slot, bind, exponent_slot_ids, slot_ids, walk
from ..expr.operators import POW, ROOT, EvalDomain
from .bfgs import bfgs_minimize

R2_THRESHOLD = 0.999999


class DegenerateTruth(ValueError):
    """Truth values have zero variance, so R² is undefined."""


@dataclass(frozen=True)
class OptConfig:
    restarts: int = 30
    n_small: int = 10
    small_range: tuple[float, float] = (0.0, 1.0)
    wide_range: tuple[float, float] = (-10.0, 10.0)
    exponent_range: tuple[float, float] = (0.0, 1.0)
    n_reference: int = 80
    redraw_reference: bool = False
    max_iter: int = 200
    gtol: float = 1e-10
    threshold_univariate: int = 5
    threshold_bivariate: int = 3
    sweep_min: int = 2
    sweep_cap: int = 625
    sweep_restarts: int = 4
    early_stop: bool = True
    snap_exponents: bool = True
    equivalence_tol: float = 1e-6

    def __post_init__(self):
        if self.restarts < 1 or not 0 <= self.n_small <= self.restarts:
            raise ValueError("need restarts >= 1 and 0 <= n_small <= restarts")
        if self.n_reference < 1 or self.max_iter < 1 or self.sweep_restarts < 1:
            raise ValueError("reference count, iterations and sweep restarts must be >= 1")

    def threshold(self, n_vars: int) -> int:
        return self.threshold_univariate if n_vars <= 1 else self.threshold_bivariate


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float)
        if len(self.X) != len(self.y):
            raise ValueError("X and y lengths differ")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class FitResult:
    constants: dict[int, float]
    r2: float
    objective: float
    strategy: str
    recovered: bool = False
    flags: tuple[str, ...] = ()
    restarts_run: int = 0

    @property
    def r2_or_none(self) -> Optional[float]:
        return None if not math.isfinite(self.r2) else self.r2

    def to_dict(self) -> dict:
        return {
            "constants": {str(k): v for k, v in sorted(self.constants.items())},
            "r2": self.r2_or_none,
            "objective": self.objective if math.isfinite(self.objective) else None,
            "strategy": self.strategy,
            "recovered": self.recovered,
            "flags": list(self.flags),
        }


def failed_fit(strategy: str, flags: tuple[str, ...] = ()) -> FitResult:
    return FitResult({}, -math.inf, math.inf, strategy, False, flags)


def r_squared(pred, truth, complex_safe: bool = True) -> float:
    """Coefficient of determination.

    With ``complex_safe`` the residuals are measured by their modulus, so a
    complex prediction can never score above 1.  Without it, squares of the
    raw (possibly complex) residuals are used and only the real part kept,
    which is the unsafe variant that can exceed 1.
    """
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1 or len(t) < 2:
        raise ValueError("pred and truth must be equal-length vectors of length >= 2")
    dev = t - t.mean()
    ss_tot = float(np.sum(np.abs(dev) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTruth("truth has zero variance")
    if complex_safe:
        ss_res = float(np.sum(np.abs(p - t) ** 2))
    else:
        ss_res = float(np.real(np.sum((p - t) ** 2)))
    return 1.0 - ss_res / ss_tot


def _score(pred, truth) -> float:
    if not np.all(np.isfinite(pred)):
        return -math.inf
    try:
        return r_squared(pred, truth, complex_safe=True)
    except DegenerateTruth:
        return 1.0 if np.allclose(pred, truth, rtol=0, atol=1e-12) else -math.inf


def exponent_slots(e: Expr) -> list[int]:
    """Slots sitting in the exponent position of pow/root nodes."""
    return exponent_slot_ids(e, POW) + exponent_slot_ids(e, ROOT)


def _seed_seq(seed, *key) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


class _Objective:
    """MSE over a point set, with its gradient, for a compiled skeleton."""

    def __init__(self, comp: Compiled, X, y):
        self.comp = comp
        self.X = X
        self.y = y
        self.n = len(y)

    def __call__(self, theta):
        with np.errstate(all="ignore"):
            v, J = self.comp(self.X, theta)
            r = v - self.y
            f = float(np.mean(np.abs(r) ** 2))
            g = (2.0 / self.n) * np.real(np.conj(r) @ J)
        return f, g


_REF_KEY = 1_000_003  # substream id for reference-point draws, disjoint from restart ids


def _reference(data: Dataset, cfg: OptConfig, seed, restart: int | None = None):
    n = len(data)
    k = min(cfg.n_reference, n)
    key = (_REF_KEY,) if restart is None else (_REF_KEY, restart)
    rng = np.random.default_rng(_seed_seq(seed, *key))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    return data.X[idx], data.y[idx]


def fit_constants(s, data: Dataset, domain: EvalDomain | None = None, cfg: OptConfig = OptConfig(),
                  seed=0, complex_mode: bool = False, fixed: Mapping[int, float] | None = None,
                  restarts: int | None = None, strategy: str | None = None) -> FitResult:
    """Fit the free slots of ``s`` by multi-restart BFGS on reference points.

    The first ``cfg.n_small`` restarts draw constants from ``small_range``,
    the rest from ``wide_range``; exponent slots always use
    ``exponent_range``.  The best restart (lowest reference MSE) is scored
    by R² on the full dataset.  Placeholders are ignored.
    """
    e = getattr(s, "expr", s)
    fixed = dict(fixed or {})
    free = [i for i in slot_ids(e) if i not in fixed]
    strategy = strategy or ("complex" if complex_mode else "bfgs")
    th = domain.thresholds if domain is not None else None
    comp = Compiled(e, free, fixed, complex_mode=complex_mode, thresholds=th)
    n_restarts = cfg.restarts if restarts is None else restarts
    n_small = cfg.n_small if restarts is None else min(cfg.n_small, max(1, math.ceil(n_restarts / 3)))

    def full_r2(theta):
        pred = comp(data.X, theta, need_grad=False)[0]
        return _score(pred, data.y)

    if not free:
        r2 = full_r2(np.zeros(0))
        obj = _Objective(comp, *_reference(data, cfg, seed))(np.zeros(0))[0]
        return FitResult(dict(fixed), r2, obj, strategy, r2 > R2_THRESHOLD, (), 0)

    exp_ids = set(exponent_slots(e))
    Xr, yr = _reference(data, cfg, seed)
    objective = _Objective(comp, Xr, yr)
    best_theta, best_f = None, math.inf
    ran = 0
    for i in range(n_restarts):
        rng = np.random.default_rng(_seed_seq(seed, i))
        lo, hi = cfg.small_range if i < n_small else cfg.wide_range
        x0 = rng.uniform(lo, hi, size=len(free))
        for j, sid in enumerate(free):
            if sid in exp_ids:
                x0[j] = rng.uniform(*cfg.exponent_range)
        if cfg.redraw_reference:
            objective = _Objective(comp, *_reference(data, cfg, seed, i))
        res = bfgs_minimize(objective, x0, max_iter=cfg.max_iter, gtol=cfg.gtol)
        ran += 1
        if not res.ok or not math.isfinite(res.f):
            continue
        if res.f < best_f:
            best_theta, best_f = res.x, res.f
            if cfg.early_stop and _near_perfect(best_f, yr) and full_r2(best_theta) > R2_THRESHOLD:
                break
    if best_theta is None:
        out = failed_fit(strategy, ("all-restarts-failed",))
        out.restarts_run = ran
        return out
    flags: tuple[str, ...] = ()
    if complex_mode and cfg.snap_exponents:
        best_theta, best_f, snapped = _snap(comp, objective, free, exp_ids, best_theta, best_f, cfg)
        if snapped:
            flags = ("exponents-snapped",)
    r2 = full_r2(best_theta)
    consts = dict(fixed)
    consts.update({sid: float(v) for sid, v in zip(free, best_theta)})
    return FitResult(consts, r2, best_f, strategy, r2 > R2_THRESHOLD, flags, ran)


def _near_perfect(f: float, y) -> bool:
    var = float(np.var(np.abs(y))) if len(y) > 1 else 0.0
    return f <= max(var, 1e-300) * 1e-7


def _snap(comp, objective, free, exp_ids, theta, f, cfg, tol=1e-3):
    """Round exponents lying near integers or halves, refitting the rest.

    The rounded version is kept when its reference error is no worse than
    a small multiple of the unrounded one.
    """
    targets = {}
    for j, sid in enumerate(free):
        if sid in exp_ids:
            for grid in (1.0, 0.5):
                r = round(theta[j] / grid) * grid
                if abs(theta[j] - r) < tol and r != 0:
                    targets[j] = r
                    break
    if not targets:
        return theta, f, False
    keep = [j for j in range(len(free)) if j not in targets]
    fixed = dict(comp.fixed)
    fixed.update({free[j]: v for j, v in targets.items()})
    sub = Compiled(comp.expr, [free[j] for j in keep], fixed, comp.complex_mode, comp.th)
    sub_obj = _Objective(sub, objective.X, objective.y)
    res = bfgs_minimize(sub_obj, theta[keep], max_iter=cfg.max_iter, gtol=cfg.gtol)
    if not res.ok or not math.isfinite(res.f) or res.f > max(4 * f, 1e-30):
        return theta, f, False
    new = theta.copy()
    for j, v in targets.items():
        new[j] = v
    new[keep] = res.x
    return new, res.f, True


def integer_exponent_sweep(s, data: Dataset, domain: EvalDomain | None = None, cfg: OptConfig = OptConfig(),
                           seed=0, n_vars: int = 1, threshold: int | None = None) -> FitResult:
    """Try integer exponents ``sweep_min..threshold`` for every pow exponent slot.

    Remaining slots are fitted by BFGS for each combination; the best R² is
    kept.  The Cartesian product is capped at ``cfg.sweep_cap``; when the
    cap truncates it the result carries the ``budget-exceeded`` flag.
    """
    e = getattr(s, "expr", s)
    exps = exponent_slot_ids(e, POW)
    if not exps:
        raise ValueError("skeleton has no pow exponent slot to sweep")
    thr = cfg.threshold(n_vars) if threshold is None else threshold
    values = list(range(cfg.sweep_min, thr + 1))
    combos = itertools.product(values, repeat=len(exps))
    total = len(values) ** len(exps)
    flags: tuple[str, ...] = ()
    if total > cfg.sweep_cap:
        combos = itertools.islice(combos, cfg.sweep_cap)
        flags = ("budget-exceeded",)
    best = failed_fit("integer", flags)
    for n_combo, combo in enumerate(combos):
        fixed = dict(zip(exps, (float(v) for v in combo)))
        res = fit_constants(e, data, domain, cfg, _seed_seq(seed, n_combo), fixed=fixed,
                            restarts=cfg.sweep_restarts, strategy="integer")
        if res.r2 > best.r2 or (best.r2 == -math.inf and res.objective < best.objective):
            best = replace(res, flags=flags + res.flags)
        if cfg.early_stop and best.r2 > R2_THRESHOLD:
            break
    return best


def _pow_exponents(e: Expr) -> tuple[list[int], list[float]]:
    slots, nums = [], []
    for node in walk(e):
        if isinstance(node, Op) and node.kind == POW:
            c = node.consts[0]
            if isinstance(c, Slot):
                slots.append(c.id)
            else:
                nums.append(c.value)
    return slots, nums


def select_strategy(s, n_vars: int, max_exponent: int | None = None, cfg: OptConfig = OptConfig()) -> str:
    """``"integer"``, ``"complex"`` or ``"bfgs"``.

    Skeletons without pow exponent slots use plain BFGS.  Otherwise integer
    traversal is chosen when the exponents to try stay within the threshold
    for the variable count (5 univariate, 3 bivariate), and the complex
    objective when they exceed it.  ``max_exponent`` defaults to the largest
    fixed pow exponent in the skeleton, or to the threshold itself.
    """
    e = getattr(s, "expr", s)
    slots, nums = _pow_exponents(e)
    if not slots:
        return "bfgs"
    need = max_exponent
    if need is None and nums:
        need = max(nums)
    if need is None:
        return "integer"
    return "integer" if need <= cfg.threshold(n_vars) else "complex"


def bound_expression(candidate, fit: FitResult) -> Expr:
    e = getattr(candidate, "expr", candidate)
    return bind(e, fit.constants)


def recovery_check(fit: FitResult, candidate, label: Expr, domain: EvalDomain,
                   tol: float | None = None, cfg: OptConfig = OptConfig()) -> bool:
    """R² above 0.999999 and numeric equivalence of the fitted candidate to the label."""
    if not fit.r2 > R2_THRESHOLD:
        return False
    tol = cfg.equivalence_tol if tol is None else tol
    return numeric_equivalent(bound_expression(candidate, fit), label, domain, tol=tol) is True
