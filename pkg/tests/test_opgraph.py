import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from opsr.expr import canonicalize, parse, to_text
from opsr.expr.canonical import skeleton_key
from opsr.expr.nodes import Op
from opsr.expr.operators import ADD, COS, N_KINDS, SCALE, SHIFT, SIN
from opsr.opgraph import (
    LABELS, SIZE, AdjacencyMatrix, degree_profile, encode_expression, kind_index, root_candidates,
    validate_matrix, var_index,
)

from conftest import expressions
from test_expr import swap_commutative

FIG1 = "sin(x_1)+cos(x_2)+x_1"


def fig1() -> AdjacencyMatrix:
    return encode_expression(parse(FIG1))


def test_fig1_edges():
    assert fig1().named_edges() == {("add", "sin"), ("add", "cos"), ("add", "x_1"), ("sin", "x_1"), ("cos", "x_2")}


def test_fig1_boolean_layout():
    a = fig1().array
    expected = np.zeros((SIZE, SIZE), dtype=bool)
    for i, j in [(0, 3), (0, 4), (0, 11), (3, 11), (4, 12)]:
        expected[i, j] = True
    assert np.array_equal(a, expected)


def test_single_variable_has_no_edges():
    assert fig1() != encode_expression(parse("x_1"))
    assert not encode_expression(parse("x_1")).array.any()


def test_self_loop():
    assert encode_expression(parse("sin(sin(x_1))")).named_edges() == {("sin", "sin"), ("sin", "x_1")}


def test_variable_out_of_range_is_rejected():
    with pytest.raises(ValueError):
        encode_expression(parse("x_3"))


def test_labels_fixed_order():
    assert LABELS[:N_KINDS] == ("add", "mul", "inv", "sin", "cos", "exp", "pow", "root", "log", "shift", "scale")
    assert LABELS[N_KINDS:] == ("x_1", "x_2")
    assert kind_index(SIN) == 3 and var_index(2) == 12


def test_degree_profile_fig1():
    p = degree_profile(fig1())
    assert (p.out_of("add"), p.in_of("add")) == (3, 0)
    assert (p.out_of("sin"), p.in_of("sin")) == (1, 1)


def test_degree_profile_empty():
    p = degree_profile(AdjacencyMatrix())
    assert not any(p.out_degree) and not any(p.in_degree)


def test_degree_profile_self_loop():
    p = degree_profile(encode_expression(parse("sin(sin(x_1))")))
    assert (p.out_of("sin"), p.in_of("sin")) == (2, 1)


def test_root_candidates_fig1():
    assert root_candidates(fig1()) == [ADD]


def test_root_candidates_with_cycle():
    m = encode_expression(parse("cos(x_1)+cos(x_1+x_2)"))
    p = degree_profile(m)
    # add: out {cos, x_1, x_2}, in {cos}; cos: out {x_1, add}, in {add}
    assert (p.out_of("add"), p.in_of("add")) == (3, 1)
    assert (p.out_of("cos"), p.in_of("cos")) == (2, 1)
    assert root_candidates(m) == [ADD, COS]


def test_root_candidates_empty():
    assert root_candidates(AdjacencyMatrix()) == []


def test_dangling_operator_diagnostic():
    m = fig1().flipped(kind_index(SIN), var_index(1))
    assert [str(d) for d in validate_matrix(m)] == ["dangling-operator(sin)"]


def test_well_formed_matrix_has_no_diagnostics():
    assert validate_matrix(fig1()) == []


def test_multiple_roots_diagnostic():
    m = AdjacencyMatrix.from_edges([("sin", "x_1"), ("cos", "x_2")])
    codes = [d.code for d in validate_matrix(m)]
    assert "multiple-roots" in codes


def test_json_round_trip_is_bit_exact():
    m = fig1()
    text = m.to_json()
    back = AdjacencyMatrix.from_json(text)
    assert back == m and back.to_json() == text


def test_json_rejects_wrong_labels():
    with pytest.raises(ValueError):
        AdjacencyMatrix.from_json('{"labels": ["a"], "matrix": [[0]]}')


def test_matrix_is_immutable():
    with pytest.raises(ValueError):
        fig1().array[0, 0] = True


def summands(e):
    """Terms of a sum chain, looking through operand coefficients."""
    if isinstance(e, Op) and e.kind in (ADD, SHIFT):
        return [t for a in e.args for t in summands(a)]
    if isinstance(e, Op) and e.kind == SCALE:
        return summands(e.args[0])
    return [e]


def collects_terms(e) -> bool:
    """Whether canonicalization would merge like summands or spread a coefficient over a sum."""
    if not isinstance(e, Op):
        return False
    if e.kind == SCALE and isinstance(e.args[0], Op) and e.args[0].kind in (ADD, SHIFT, SCALE):
        return True
    if e.kind in (ADD, SHIFT):
        keys = [skeleton_key(t) for t in summands(e)]
        if len(set(keys)) < len(keys):
            return True
    return any(collects_terms(a) for a in e.args)


@settings(max_examples=300)
@given(expressions)
def test_encoding_invariant_under_canonicalize(e):
    e = parse(to_text(e))
    assume(not collects_terms(e))
    assert encode_expression(canonicalize(e)) == encode_expression(e)


def test_collecting_like_terms_changes_the_graph():
    # x_1+x_1 and 2*x_1 are one function but two different operator graphs
    assert encode_expression(parse("x_1+x_1")).named_edges() == {("add", "x_1")}
    assert encode_expression(canonicalize(parse("x_1+x_1"))).named_edges() == set()


def test_spreading_a_coefficient_changes_the_graph():
    e = parse("2*(sin(x_1)+cos(x_1))")
    assert ("scale", "add") in encode_expression(e).named_edges()
    assert ("scale", "add") not in encode_expression(canonicalize(e)).named_edges()


@pytest.mark.parametrize("a, b", [
    ("3*pow(x_1,2)+2*sqrt(x_1)", "2*sqrt(x_1)+3*pow(x_1,2)"),
    ("1.5*exp(x_1)+5*cos(x_2)", "5*cos(x_2)+1.5*exp(x_1)"),
    ("2*x_1*sin(x_1)", "sin(x_1)*(2*x_1)"),
])
def test_reordered_text_encodes_alike(a, b):
    assert encode_expression(parse(a)) == encode_expression(parse(b))


def test_operand_coefficient_is_not_a_scale_node():
    assert encode_expression(parse("1.5*exp(x_1)+5*cos(x_2)")).named_edges() == {
        ("add", "exp"), ("add", "cos"), ("exp", "x_1"), ("cos", "x_2")}
    # outside a sum or product a scale is a real operator
    assert ("exp", "scale") in encode_expression(parse("exp(-1*pow(x_1,2))")).named_edges()


@given(expressions)
def test_encoding_ignores_commutative_order(e):
    assert encode_expression(swap_commutative(e)) == encode_expression(e)


@given(expressions)
def test_variable_rows_are_zero(e):
    assert not encode_expression(e).array[N_KINDS:].any()


@given(st.lists(st.tuples(st.integers(0, SIZE - 1), st.integers(0, SIZE - 1)), max_size=40))
def test_degree_sums_equal_edge_count(edges):
    m = AdjacencyMatrix.from_edges(edges)
    p = degree_profile(m)
    assert sum(p.out_degree) == sum(p.in_degree) == len(m.edges())
