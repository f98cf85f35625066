"""Quasi-Newton minimisation with an inverse-Hessian BFGS update and a strong-Wolfe line search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FunGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class BFGSResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    n_iter: int
    n_eval: int
    status: str
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status not in ("invalid-start",)


def _finite(f, g=None) -> bool:
    if not np.isfinite(f):
        return False
    return g is None or bool(np.all(np.isfinite(g)))


class _Counter:
    def __init__(self, fg: FunGrad):
        self.fg = fg
        self.n = 0

    def __call__(self, x):
        self.n += 1
        f, g = self.fg(x)
        f = float(f)
        if not _finite(f, g):
            return np.inf, None
        return f, np.asarray(g, dtype=float)


def _cubic_min(a, fa, da, b, fb, db):
    # minimiser of the cubic interpolating (a, fa, da), (b, fb, db); None if ill-posed
    d1 = da + db - 3 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


def wolfe_line_search(fg, x, f0, g0, p, c1=1e-4, c2=0.9, alpha=1.0, max_evals=40, alpha_max=1e10):
    """Step length satisfying the strong Wolfe conditions.

    Non-finite objective values count as +inf, which pulls the bracket back
    toward smaller steps.  Returns ``(alpha, f, g)`` or None when no
    decreasing step was found.
    """
    dphi0 = float(g0 @ p)
    best = None

    def phi(a):
        f, g = fg(x + a * p)
        d = float(g @ p) if g is not None else np.nan
        return f, g, d

    def note(a, f, g):
        nonlocal best
        if g is not None and f < f0 and (best is None or f < best[1]):
            best = (a, f, g)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi, evals):
        while evals < max_evals:
            t = None
            if np.isfinite(f_hi) and np.isfinite(d_hi) and np.isfinite(d_lo):
                t = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_, hi_ = min(lo, hi), max(lo, hi)
            span = hi_ - lo_
            if t is None or not (lo_ + 0.1 * span <= t <= hi_ - 0.1 * span):
                t = 0.5 * (lo + hi)
            f, g, d = phi(t)
            evals += 1
            note(t, f, g)
            if f > f0 + c1 * t * dphi0 or f >= f_lo or g is None:
                hi, f_hi, d_hi = t, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return t, f, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = t, f, d
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return best

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha
    for i in range(max_evals):
        f, g, d = phi(a)
        note(a, f, g)
        if g is None or f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, d, i + 1)
        if abs(d) <= -c2 * dphi0:
            return a, f, g
        if d >= 0:
            return zoom(a, f, d, a_prev, f_prev, d_prev, i + 1)
        a_prev, f_prev, d_prev = a, f, d
        a = min(2.0 * a, alpha_max)
    return best


def bfgs_minimize(fun_grad: FunGrad, x0, max_iter: int = 200, gtol: float = 1e-10,
                  c1: float = 1e-4, c2: float = 0.9, ftol: float = 1e-15,
                  record: bool = False) -> BFGSResult:
    """Minimise ``fun_grad`` (returning value and gradient) from ``x0``.

    Stops when the gradient's max-norm drops below ``gtol``, after
    ``max_iter`` iterations, or when the line search cannot decrease the
    objective further.  Every accepted step lowers the objective, so the
    returned value never exceeds ``f(x0)``.  A non-finite start gives status
    ``"invalid-start"``.
    """
    with np.errstate(all="ignore"):
        return _bfgs(fun_grad, x0, max_iter, gtol, c1, c2, ftol, record)


def _bfgs(fun_grad, x0, max_iter, gtol, c1, c2, ftol, record) -> BFGSResult:
    fg = _Counter(fun_grad)
    x = np.array(x0, dtype=float)
    f, g = fg(x)
    hist = [f] if record else []
    if g is None:
        return BFGSResult(x, np.inf, np.full_like(x, np.nan), 0, fg.n, "invalid-start", hist)
    n = x.size
    eye = np.eye(n)
    H = eye.copy()
    fresh = True
    status = "max-iter"
    it = 0
    stall = 0
    while it < max_iter:
        if n == 0 or np.max(np.abs(g)) < gtol:
            status = "converged"
            break
        p = -H @ g
        if not np.all(np.isfinite(p)) or g @ p >= 0:
            H = eye.copy()
            fresh = True
            p = -g
        step = wolfe_line_search(fg, x, f, g, p, c1, c2)
        if step is None:
            if not fresh:
                H = eye.copy()
                fresh = True
                continue
            status = "line-search-failed"
            break
        a, f_new, g_new = step
        s = a * p
        y = g_new - g
        x = x + s
        improvement = f - f_new
        f, g = f_new, g_new
        it += 1
        if record:
            hist.append(f)
        sy = float(s @ y)
        if sy > 1e-300 and np.isfinite(sy):
            if fresh:
                H = eye * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
            fresh = False
        if improvement <= ftol * max(1.0, abs(f)):
            stall += 1
            if stall >= 3:
                status = "stalled"
                break
        else:
            stall = 0
        if f == 0.0:
            status = "converged"
            break
    return BFGSResult(x, f, g, it, fg.n, status, hist)
