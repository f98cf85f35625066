import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from opsr.expr.nodes import Num, Op, Var
from opsr.expr.operators import ADD, COS, EXP, INV, LOG, MUL, POW, ROOT, SCALE, SHIFT, SIN

settings.register_profile("opsr", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("opsr")


def _leaf():
    plain = st.builds(Var, st.integers(1, 2))
    scaled = st.builds(lambda i, c: Var(i, Num(c)), st.integers(1, 2),
                       st.sampled_from([0.5, 1.5, 2.0, -1.0, 3.0]))
    return plain | scaled


def _grow(children):
    unary = st.builds(lambda k, a: Op(k, (a,)), st.sampled_from([SIN, COS, EXP, LOG, INV]), children)
    powered = st.builds(lambda a, p: Op(POW, (a,), (Num(p),)), children, st.sampled_from([2.0, 3.0]))
    rooted = st.builds(lambda a: Op(ROOT, (a,), (Num(0.5),)), children)
    affine = st.builds(lambda k, a, c: Op(k, (a,), (Num(c),)), st.sampled_from([SHIFT, SCALE]), children,
                       st.sampled_from([0.5, 2.0, -1.5]))
    binary = st.builds(lambda k, a, b: Op(k, (a, b), (Num(1.0),)), st.sampled_from([ADD, MUL]), children, children)
    return unary | powered | rooted | affine | binary


expressions = st.recursive(_leaf(), _grow, max_leaves=6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def trained():
    """Full toy training at default settings, shared by every test that needs a trained model."""
    import time

    from opsr.neural import HyperParams, train_all

    t0 = time.perf_counter()
    model, corpus = train_all(HyperParams(seed=0))
    return model, corpus, time.perf_counter() - t0


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA.setdefault(mark.args[0], []).append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status} ({sum(results)}/{len(results)} checks)")
