import json
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclqt import fracops, model
from fraclqt.errors import DomainError
from fraclqt.fracops import Grid
from fraclqt.model import LinearPlant, PolynomialReference, TrackingProblem, Weights, evaluate_cost
from fraclqt.problemfile import parse_problem, problem_to_dict

settings.register_profile("fraclqt", max_examples=40, deadline=None)
settings.load_profile("fraclqt")

alphas = st.floats(0.05, 1.0, allow_nan=False)
finite = st.floats(-10.0, 10.0, allow_nan=False)


@given(st.floats(0.05, 30.0))
def test_gamma_recurrence(x):
    assert fracops.gamma(x + 1.0) == np.float64(x * fracops.gamma(x)) or math.isclose(
        fracops.gamma(x + 1.0), x * fracops.gamma(x), rel_tol=1e-13
    )


@given(alphas, st.integers(1, 400))
def test_gl_weights_partial_sums_positive_and_decreasing(alpha, n):
    w = fracops.gl_weights(alpha, n)
    partial = np.cumsum(w)
    assert np.all(partial > -1e-15)
    assert np.all(np.diff(partial) <= 1e-15)


@given(alphas, st.integers(2, 60), finite, finite, st.integers(0, 2**32 - 1))
def test_caputo_is_linear(alpha, n, a, b, seed):
    g = Grid(1.0, n)
    rng = np.random.default_rng(seed)
    f1, f2 = rng.standard_normal((2, n + 1))
    lhs = fracops.caputo_apply(a * f1 + b * f2, alpha, g)
    rhs = a * fracops.caputo_apply(f1, alpha, g) + b * fracops.caputo_apply(f2, alpha, g)
    scale = 1.0 + np.max(np.abs(lhs)) + np.max(np.abs(rhs))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


@given(alphas, st.integers(1, 60), finite)
def test_caputo_ignores_constant_shift(alpha, n, c):
    g = Grid(2.0, n)
    f = np.sin(g.nodes)
    d = fracops.caputo_apply(f + c, alpha, g) - fracops.caputo_apply(f, alpha, g)
    assert np.max(np.abs(d)) <= 1e-12 * (1.0 + abs(c)) * g.h ** (-alpha)


@given(alphas, st.integers(1, 80), st.floats(0.1, 5.0))
def test_rl_of_constant(alpha, n, t_final):
    g = Grid(t_final, n)
    exact = t_final**alpha / fracops.gamma(alpha + 1.0)
    assert math.isclose(fracops.rl_integral(np.ones(n + 1), alpha, g), exact, rel_tol=1e-12)


@given(st.floats(0.1, 1.0), st.floats(-3.0, 3.0))
def test_mittag_leffler_monotone_or_refuses(alpha, z):
    # either both values are trustworthy and ordered, or the series refuses
    try:
        lo, hi = fracops.mittag_leffler(alpha, z), fracops.mittag_leffler(alpha, z + 0.1)
    except DomainError:
        return
    assert lo <= hi + 1e-8 * max(1.0, abs(hi))


@given(st.floats(0.5, 1.0), st.floats(-2.0, 0.0))
def test_mittag_leffler_accurate_range_is_usable(alpha, z):
    v = fracops.mittag_leffler(alpha, z)
    assert 0.0 < v <= 1.0 + 1e-12


def random_problem(seed, q=2):
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((q, q))
    Q = L @ L.T
    return TrackingProblem(
        LinearPlant(rng.standard_normal((q, q)), rng.standard_normal((q, 1))),
        Weights(Q, [[1.0 + rng.random()]], np.eye(q) * rng.random()),
        PolynomialReference(tuple(tuple(rng.standard_normal(2)) for _ in range(q))),
        rng.standard_normal(q),
        0.9 + 0.1 * rng.random(),
        1.0,
    )


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_cost_scales_linearly_with_weights(seed, c):
    p = random_problem(seed)
    g = Grid(1.0, 20)
    rng = np.random.default_rng(seed + 1)
    x, u = rng.standard_normal((2, 21)), rng.standard_normal((1, 21))
    W = p.weights
    pc = p.replace(weights=Weights(W.Q.values * c, W.R.values * c, W.T * c))
    assert math.isclose(evaluate_cost(x, u, pc, g), c * evaluate_cost(x, u, p, g), rel_tol=1e-13)


@given(st.integers(0, 10_000))
def test_cost_nonnegative(seed):
    p = random_problem(seed)
    g = Grid(1.0, 15)
    x, u = np.random.default_rng(seed).standard_normal((2, 2, 16))
    assert evaluate_cost(x, u[:1], p, g) >= 0.0


@given(st.integers(0, 10_000))
def test_problem_dict_round_trip(seed):
    p = random_problem(seed)
    doc = json.loads(json.dumps(problem_to_dict(p, Grid(1.0, 30))))
    q, g = parse_problem(doc)
    assert problem_to_dict(q, g) == problem_to_dict(p, Grid(1.0, 30))


@given(st.lists(st.floats(-5.0, 5.0), min_size=2, max_size=5), st.floats(0.0, 1.0))
def test_table_signal_interpolates_linearly(values, theta):
    times = np.arange(len(values), dtype=float)
    s = model.Signal(np.array(values), times)
    t = theta * (len(values) - 1)
    assert math.isclose(s.at(t), np.interp(t, times, values), rel_tol=1e-12, abs_tol=1e-12)
