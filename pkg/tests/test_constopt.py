import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from opsr.bench import load_builtin, sample_dataset
from opsr.constopt import (
    R2_THRESHOLD, Dataset, DegenerateTruth, FitResult, OptConfig, bfgs_minimize, fit_constants,
    integer_exponent_sweep, r_squared, recovery_check, select_strategy,
)
from opsr.expr import parse, skeletonize
from opsr.expr.nodes import Hole, Num, Op, walk
from opsr.expr.operators import ADD, POW, EvalDomain

BOX = EvalDomain.box((-1, 1))
GRID = np.linspace(-1, 1, 200)


def bench(name):
    return next(b for b in load_builtin("univariate") + load_builtin("bivariate") if b.name == name)


# -- BFGS -------------------------------------------------------------------

def quadratic(c):
    return float((c[0] - 3) ** 2), np.array([2 * (c[0] - 3)])


def rosenbrock(v):
    x, y = v
    f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
    return float(f), np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])


def test_quadratic_minimum():
    res = bfgs_minimize(quadratic, [0.0])
    assert abs(res.x[0] - 3) < 1e-8


def test_rosenbrock_matches_reference_optimizer():
    ref = minimize(lambda v: rosenbrock(v)[0], [-1.2, 1.0], jac=lambda v: rosenbrock(v)[1],
                   method="CG", options={"gtol": 1e-12, "maxiter": 100_000})
    res = bfgs_minimize(rosenbrock, [-1.2, 1.0])
    assert np.allclose(ref.x, [1, 1], atol=1e-5)
    assert np.allclose(res.x, ref.x, atol=1e-5)


def test_nan_start_is_discarded():
    res = bfgs_minimize(lambda x: (float("nan"), np.array([float("nan")])), [0.0])
    assert res.status == "invalid-start" and not res.ok


def test_nonfinite_region_is_avoided():
    # log barrier: infinite for x <= 0, minimum at x = 1
    def f(x):
        if x[0] <= 0:
            return math.inf, np.array([math.nan])
        return x[0] - math.log(x[0]), np.array([1 - 1 / x[0]])

    res = bfgs_minimize(f, [5.0])
    assert abs(res.x[0] - 1) < 1e-6


@settings(max_examples=40)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_accepted_steps_never_increase(x0, y0):
    res = bfgs_minimize(rosenbrock, [x0, y0], max_iter=50, record=True)
    h = res.history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert res.f <= rosenbrock([x0, y0])[0]


# -- R² ---------------------------------------------------------------------

def test_r2_perfect_and_mean():
    t = np.array([1.0, 2.0, 4.0])
    assert r_squared(t, t) == 1.0
    assert r_squared(np.full(3, t.mean()), t) == pytest.approx(0.0, abs=1e-15)


def test_r2_imaginary_residual():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    p = t.astype(complex)
    p[1] += 0.5j
    # modulus residual 0.25 against total 5
    assert r_squared(p, t) == pytest.approx(1 - 0.25 / 5.0, abs=1e-15)
    assert r_squared(p, t, complex_safe=False) == pytest.approx(1 + 0.25 / 5.0, abs=1e-15)


def test_r2_errors():
    with pytest.raises(DegenerateTruth):
        r_squared(np.array([1.0, 2.0]), np.array([3.0, 3.0]))
    with pytest.raises(ValueError):
        r_squared(np.array([1.0]), np.array([1.0]))


@given(st.integers(0, 2**32 - 1))
def test_complex_safe_r2_is_bounded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 50))
    t = rng.normal(size=n) * rng.uniform(0.01, 100)
    p = t + rng.normal(size=n) * rng.uniform(0, 10) + 1j * rng.normal(size=n) * rng.uniform(0, 10)
    assert r_squared(p, t) <= 1.0


# -- fitting ----------------------------------------------------------------

def test_constant1_constants():
    b = bench("Constant-1")
    s = parse("c1*pow(x_1,3)+c2*pow(x_1,2)+c3*x_1")
    fit = fit_constants(s, sample_dataset(b, 1000, 0), b.domain, seed=0)
    assert np.allclose([fit.constants[i] for i in (1, 2, 3)], [3.39, 2.12, 1.78], atol=1e-4)
    assert fit.r2 > R2_THRESHOLD


def test_slotless_skeleton():
    fit = fit_constants(parse("sin(x_1)"), Dataset(GRID, np.sin(GRID)), BOX)
    assert fit.r2 == 1.0 and fit.restarts_run == 0


def test_wrong_skeleton_matches_grid_oracle():
    y = np.sin(GRID)
    fit = fit_constants(parse("c1*cos(x_1)"), Dataset(GRID, y), BOX)
    best = max(r_squared(c * np.cos(GRID), y) for c in np.linspace(-5, 5, 20001))
    assert best < R2_THRESHOLD
    # fitted on a reference subset, so it cannot beat the full-data optimum
    assert fit.r2 <= best + 1e-12 and not fit.recovered


def test_placeholder_is_ignored():
    # c1*x_1 + <hole>
    s = Op(ADD, (parse("c1*x_1"), Hole()), (Num(1.0),))
    fit = fit_constants(s, Dataset(GRID, 3 * GRID), BOX)
    assert fit.r2 > R2_THRESHOLD and fit.constants[1] == pytest.approx(3.0, abs=1e-9)


def test_all_restarts_failed():
    X = np.linspace(0.5, 1, 100)
    # log(c1 - 10) is undefined from every start drawn in (0, 1) and (-10, 10)
    fit = fit_constants(parse("log(c1*0-10+c2*0)"), Dataset(X, X), EvalDomain.box((0.5, 1)),
                        OptConfig(restarts=3, n_small=1))
    assert fit.r2 == -math.inf and fit.r2_or_none is None and not fit.recovered


def test_reference_points_capped_by_data():
    X = np.linspace(-1, 1, 20)
    fit = fit_constants(parse("c1*x_1"), Dataset(X, 2 * X), BOX)
    assert fit.constants[1] == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_more_restarts_never_worse(seed):
    b = bench("Nguyen-5")
    data = sample_dataset(b, 300, seed)
    s = skeletonize(b.label)
    few = fit_constants(s, data, b.domain, OptConfig(restarts=10, early_stop=False), seed)
    many = fit_constants(s, data, b.domain, OptConfig(early_stop=False), seed)
    assert many.objective <= few.objective


@pytest.mark.parametrize("name", ["Nguyen-1", "Keijzer-6", "Livermore-20"])
def test_true_skeleton_fits(name):
    b = bench(name)
    s = skeletonize(b.label)
    good = sum(fit_constants(s, sample_dataset(b, 1000, sd), b.domain, seed=sd).r2 > R2_THRESHOLD
               for sd in range(10))
    assert good >= 9


# -- strategies -------------------------------------------------------------

def test_sweep_finds_quartic():
    y = GRID ** 4
    # brute-force oracle over the swept range
    errs = {e: min(np.sum((c * GRID ** e - y) ** 2) for c in np.linspace(0, 2, 201)) for e in range(2, 6)}
    assert min(errs, key=errs.get) == 4
    fit = integer_exponent_sweep(parse("c1*pow(x_1,c2)"), Dataset(GRID, y), BOX)
    assert fit.constants[2] == 4.0
    assert fit.constants[1] == pytest.approx(1.0, abs=1e-9)
    assert fit.strategy == "integer"


def test_sweep_square_is_exact():
    fit = integer_exponent_sweep(parse("c1*pow(x_1,c2)"), Dataset(GRID, GRID ** 2), BOX)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12) and fit.constants[2] == 2.0


def test_sweep_requires_exponent_slot():
    with pytest.raises(ValueError):
        integer_exponent_sweep(parse("c1*x_1"), Dataset(GRID, GRID), BOX)


def test_sweep_budget_flag():
    s = parse("c1*pow(x_1,c2)*pow(x_1,c3)*pow(x_1,c4)*pow(x_1,c5)+c6")
    fit = integer_exponent_sweep(s, Dataset(GRID, GRID ** 12), BOX, OptConfig(sweep_cap=3, early_stop=False))
    assert "budget-exceeded" in fit.flags


def test_nguyen4_routes_to_complex():
    b = bench("Nguyen-4")
    need = max(n.consts[0].value for n in walk(b.label) if isinstance(n, Op) and n.kind == POW)
    assert need == 6
    assert select_strategy(parse("c1*pow(x_1,c2)"), 1, max_exponent=need) == "complex"


def test_complex_fit_finds_high_exponent():
    X = np.linspace(0.1, 1, 200)
    fit = fit_constants(parse("c1*pow(x_1,c2)"), Dataset(X, X ** 6), EvalDomain.box((0.1, 1)), complex_mode=True)
    assert fit.r2 > R2_THRESHOLD
    assert fit.constants[2] == pytest.approx(6.0, abs=1e-6)


def test_strategy_examples():
    s = parse("c1*pow(x_1,c2)")
    assert select_strategy(s, 1, max_exponent=4) == "integer"
    assert select_strategy(s, 2, max_exponent=4) == "complex"
    assert select_strategy(parse("c1*sin(c2*x_1)"), 1) == "bfgs"


@pytest.mark.parametrize("n_vars, threshold", [(1, 5), (2, 3)])
def test_strategy_threshold_boundary(n_vars, threshold):
    s = parse("c1*pow(x_1,c2)")
    assert select_strategy(s, n_vars, max_exponent=threshold) == "integer"
    assert select_strategy(s, n_vars, max_exponent=threshold + 1) == "complex"


def test_config_validation():
    with pytest.raises(ValueError):
        OptConfig(restarts=5, n_small=10)
    assert OptConfig().restarts == 30 and OptConfig().n_small == 10 and OptConfig().n_reference == 80


# -- recovery ---------------------------------------------------------------

def fit_with(r2, consts):
    return FitResult(consts, r2, 0.0, "bfgs")


def test_recovery_examples():
    label = parse("x_1")
    cand = parse("c1*x_1")
    assert recovery_check(fit_with(1.0, {1: 1.0}), cand, label, BOX) is True
    assert recovery_check(fit_with(0.9999, {1: 1.0}), cand, label, BOX) is False
    # near-perfect score but a perturbed constant
    assert recovery_check(fit_with(0.9999999, {1: 1.001}), cand, label, BOX) is False


@given(st.floats(0.99, 1.0), st.floats(0.9, 1.1))
def test_recovery_implies_threshold(r2, c):
    if recovery_check(fit_with(r2, {1: c}), parse("c1*x_1"), parse("x_1"), BOX):
        assert r2 > R2_THRESHOLD
