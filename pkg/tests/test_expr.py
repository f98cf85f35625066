import cmath
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from opsr.bench import load_builtin
from opsr.expr import (
    DomainViolation, EvalDomain, ParseError, Thresholds, UnboundSlot, canonicalize, char_length,
    differentiate_constants, evaluate, evaluate_array, evaluate_complex, fd_gradient, numeric_equivalent, parse,
    skeletonize, to_text,
)
from opsr.expr.nodes import Num, Op, Slot, Var, slot_ids, walk
from opsr.expr.operators import ADD, EXP, INV, KINDS, LOG, MUL, N_KINDS, POW, ROOT, in_range

from conftest import expressions


def swap_commutative(e):
    if isinstance(e, Op):
        args = tuple(swap_commutative(a) for a in e.args)
        if e.kind in (ADD, MUL):
            args = args[::-1]
        return Op(e.kind, args, e.consts)
    return e


# -- parse ------------------------------------------------------------------

def test_parse_three_term_sum():
    e = parse("pow(x_1,3)+pow(x_1,2)+x_1")
    assert to_text(e) == "pow(x_1,3)+pow(x_1,2)+x_1"
    assert evaluate(e, [2.0]) == 14.0


def test_parse_single_variable():
    assert parse("x_1") == Var(1)
    assert parse("x2") == Var(2)


def test_parse_error_reports_offset():
    with pytest.raises(ParseError) as err:
        parse("sin(")
    assert err.value.pos == 4


def test_parse_unknown_identifier():
    with pytest.raises(ParseError, match="unknown identifier"):
        parse("foo(x_1)")


def test_sugar_maps_onto_table_kinds():
    assert parse("sqrt(x_1)") == Op(ROOT, (Var(1),), (Num(0.5),))
    d = parse("div(x_1,x_2)")
    assert d.kind == MUL and d.args[1].kind == INV
    assert evaluate(parse("-x_1"), [2.0]) == -2.0


def test_every_benchmark_label_round_trips():
    for name in ("univariate", "bivariate"):
        for b in load_builtin(name):
            c = canonicalize(b.label)
            assert canonicalize(parse(to_text(c))) == c, b.name


@given(expressions)
def test_round_trip_on_canonical_forms(e):
    c = canonicalize(e)
    assert to_text(canonicalize(parse(to_text(c)))) == to_text(c)


# -- evaluate ---------------------------------------------------------------

def test_evaluate_examples():
    assert evaluate(parse("pow(x_1,3)+pow(x_1,2)+x_1"), [1.0]) == 3.0
    assert evaluate(parse("0.5*x_1*(x_1+1)"), [1.0]) == 1.0


def test_log_at_zero_is_a_domain_violation():
    with pytest.raises(DomainViolation) as err:
        evaluate(parse("log(x_1)"), [0.0])
    assert err.value.kind == LOG


def test_unbound_slot():
    with pytest.raises(UnboundSlot):
        evaluate(parse("c1*x_1"), [1.0])


@pytest.mark.parametrize("kind", range(1, N_KINDS + 1))
def test_evaluate_respects_input_ranges(kind):
    th = Thresholds()
    spec = KINDS[kind]
    consts = {POW: (Num(2.0),), ROOT: (Num(0.5),)}.get(kind, tuple(Num(1.0) for _ in range(spec.n_consts)))
    if spec.arity == 2:
        e = Op(kind, (Var(1), Num(1.0)), consts)
    else:
        e = Op(kind, (Var(1),), consts)
    exponent = consts[0].value if kind in (POW, ROOT) else None
    for u in np.linspace(-30, 30, 241):
        inside = in_range(kind, float(u), th, exponent)
        if inside:
            evaluate(e, [float(u)])
        else:
            with pytest.raises(DomainViolation):
                evaluate(e, [float(u)])


def test_evaluate_array_marks_violations_nan():
    out = evaluate_array(parse("log(x_1)"), np.array([[-1.0], [1.0]]), domain=EvalDomain())
    assert math.isnan(out[0]) and out[1] == 0.0


# -- complex evaluation -----------------------------------------------------

def test_complex_principal_square_root():
    v = evaluate_complex(parse("pow(x_1,0.5)"), [-1.0])
    assert abs(v - 1j) < 1e-15


def test_complex_sin_zero():
    assert evaluate_complex(parse("sin(x_1)"), [0.0]) == 0j


def test_complex_cube_root_of_negative():
    v = evaluate_complex(parse("pow(x_1,1/3)"), [-8.0])
    assert abs(v - 2 * cmath.exp(1j * math.pi / 3)) < 1e-12
    assert abs(v - complex(1.0, 1.7320508)) < 1e-7


@given(expressions, st.floats(-2, 2), st.floats(-2, 2))
def test_complex_matches_real_on_valid_inputs(e, x1, x2):
    try:
        real = evaluate(e, [x1, x2])
    except (DomainViolation, OverflowError, ZeroDivisionError):
        assume(False)
    assume(math.isfinite(real))
    c = evaluate_complex(e, [x1, x2])
    assert abs(c - real) <= 1e-12 * max(1.0, abs(real))


# -- constant gradients -----------------------------------------------------

def test_gradient_of_linear_slot():
    assert differentiate_constants(parse("c1*x_1"), [2.0], {1: 1.0}).grad == {1: 2.0}


def test_gradient_chain_rule_at_zero():
    assert differentiate_constants(parse("sin(c1*x_1)"), [1.0], {1: 0.0}).grad == {1: 1.0}


def test_gradient_of_exponent_slot():
    e = parse("pow(x_1,c1)")
    g = differentiate_constants(e, [2.0], {1: 3.0}).grad[1]
    fd = fd_gradient(e, [2.0], {1: 3.0}, step=1e-6)[1]
    assert g == pytest.approx(8 * math.log(2), abs=1e-12)
    assert abs(g - fd) < 1e-5


def test_gradient_flags_guard_boundary():
    e = parse("log(c1*x_1)")
    assert differentiate_constants(e, [1.0], {1: Thresholds().log_min}).fallback


@settings(max_examples=100)
@given(expressions, st.floats(0.2, 1.5), st.floats(0.2, 1.5), st.integers(0, 2**32 - 1))
def test_gradient_matches_central_differences(e, x1, x2, seed):
    s = skeletonize(e)
    ids = slot_ids(s)
    consts = dict(zip(ids, np.random.default_rng(seed).uniform(0.5, 1.5, len(ids))))
    point = [x1, x2]
    try:
        g = differentiate_constants(s, point, consts)
        fd = fd_gradient(s, point, consts, step=1e-6)
    except (DomainViolation, OverflowError, ZeroDivisionError):
        assume(False)
    assume(not g.fallback)
    assume(all(math.isfinite(v) and abs(v) < 1e6 for v in fd.values()))
    for sid in ids:
        a, b = g.grad[sid], fd[sid]
        assert abs(a - b) <= 1e-5 * max(1.0, abs(a), abs(b)), (to_text(s), sid, a, b)


# -- canonical forms --------------------------------------------------------

def test_commutative_sum_normalizes():
    assert canonicalize(parse("x_1+x_2")) == canonicalize(parse("x_2+x_1"))


def test_constant_folding():
    assert to_text(canonicalize(parse("2*(3*x_1)"))) == "6*x_1"


def test_redundant_constants_stay_distinct():
    a = canonicalize(parse("log(5.2422*x_1+5.2422)"))
    b = canonicalize(parse("log(x_1+1)"))
    assert a != b


@given(expressions)
def test_canonicalize_is_idempotent(e):
    c = canonicalize(e)
    assert canonicalize(c) == c


@given(expressions)
def test_canonicalize_ignores_commutative_order(e):
    assert canonicalize(swap_commutative(e)) == canonicalize(e)


# -- equivalence ------------------------------------------------------------

def test_algebraic_identity_is_equivalent():
    d = EvalDomain.box((-1, 1))
    assert numeric_equivalent(parse("pow(x_1+1,2)"), parse("pow(x_1,2)+2*x_1+1"), d, 1000, 1e-9) is True


def test_sine_is_not_identity():
    assert numeric_equivalent(parse("sin(x_1)"), parse("x_1"), EvalDomain.box((-1, 1))) is False


def test_redundant_log_constants():
    d = EvalDomain.box((0, 2))
    label = parse("log(x_1+1)+log(pow(x_1,2)+1)")
    fitted = parse("log(5.2422*x_1+5.2422)+log(0.1908*pow(x_1,2)+0.1908)")
    assert numeric_equivalent(fitted, label, d, tol=1e-6) is False
    # log(a(x+1)) + log(b(x^2+1)) equals the label exactly when a*b = 1
    cancelling = parse("log(4*x_1+4)+log(0.25*pow(x_1,2)+0.25)")
    assert numeric_equivalent(cancelling, label, d, tol=1e-9) is True


def test_mostly_invalid_domain_is_indeterminate():
    assert numeric_equivalent(parse("log(x_1)"), parse("log(x_1)"), EvalDomain.box((-3, 1))) is None


# -- skeletons and lengths --------------------------------------------------

def test_skeleton_of_scaled_cube():
    assert to_text(skeletonize(parse("3.39*pow(x_1,3)"))) == "c1*pow(c2*x_1,3)"


def test_skeleton_wraps_leaf():
    assert to_text(skeletonize(parse("x_1"))) == "c1*x_1"


def free_numbers(e):
    """Literal numbers left in a skeleton, other than integer pow exponents."""
    if isinstance(e, Num):
        return [e.value]
    if isinstance(e, Var):
        return [e.coef.value] if isinstance(e.coef, Num) else []
    out = [c.value for c in e.consts
           if isinstance(c, Num) and not (e.kind == POW and c.value.is_integer())]
    for a in e.args:
        out += free_numbers(a)
    return out


def test_skeleton_of_modified_nguyen5():
    s = skeletonize(parse("sin(pow(x_1,2))*cos(x_1)-0.75"))
    # outer scale, shift, and one coefficient per variable leaf
    assert len(slot_ids(s)) == 4
    assert free_numbers(s) == []


@given(expressions)
def test_skeleton_slots_are_fresh(e):
    s = skeletonize(e)
    occurrences = [n.id for n in walk(s) if isinstance(n, Slot)]
    assert len(set(occurrences)) == len(occurrences)
    assert free_numbers(s) == []


def test_char_length():
    assert char_length(parse("x_1")) == 3
    assert char_length(parse("sin(x_1)")) == 8
    # canonical serialization pow(x_1,2)+pow(x_1,3)+x_1
    assert char_length(parse("pow(x_1,3)+pow(x_1,2)+x_1")) == 25
