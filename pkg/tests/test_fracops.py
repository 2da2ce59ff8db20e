import math

import numpy as np
import pytest
from scipy import special

from fraclqt import fracops
from fraclqt.errors import DomainError, InputError
from fraclqt.fracops import FractionalOrder, Grid


# -- orders and grids ---------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.0000001, float("nan")])
def test_order_rejects_out_of_range(alpha):
    with pytest.raises(DomainError):
        FractionalOrder(alpha)


@pytest.mark.parametrize("alpha, flag", [(0.9, False), (0.9000001, True), (1.0, True), (0.5, False)])
def test_theorem_range_flag(alpha, flag):
    assert FractionalOrder(alpha).theorem_range is flag


def test_grid_nodes_are_exact_multiples():
    g = Grid(10.0, 7)
    assert g.h == 10.0 / 7
    np.testing.assert_array_equal(g.nodes, np.arange(8) * g.h)
    assert g.nodes[0] == 0.0
    assert g.size == 8


@pytest.mark.parametrize("t_final, n", [(0.0, 10), (-1.0, 10), (1.0, 0)])
def test_grid_validation(t_final, n):
    with pytest.raises(InputError):
        Grid(t_final, n)


# -- gamma --------------------------------------------------------------------


def test_gamma_matches_scipy_on_0_20():
    xs = np.linspace(0.01, 20.0, 997)
    rel = [abs(fracops.gamma(x) / special.gamma(x) - 1.0) for x in xs]
    assert max(rel) < 1e-13


def test_gamma_integers_exact():
    for n in range(1, 15):
        assert fracops.gamma(n) == math.factorial(n - 1)


def test_gamma_half():
    assert fracops.gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    assert fracops.gamma(1.5) == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-14)


def test_lgamma_matches_math():
    for x in (0.3, 1.7, 12.5, 140.0):
        assert fracops.lgamma(x) == pytest.approx(math.lgamma(x), rel=1e-13, abs=1e-13)


# -- weights and the Caputo operator -------------------------------------------


def test_gl_weights_alpha_one():
    np.testing.assert_array_equal(fracops.gl_weights(1.0, 3), [1.0, -1.0, 0.0, 0.0])


def test_gl_weights_alpha_half():
    np.testing.assert_allclose(fracops.gl_weights(0.5, 3), [1.0, -0.5, -0.125, -0.0625], rtol=0, atol=1e-16)


def test_gl_weights_partial_sum_tends_to_zero():
    w = fracops.gl_weights(0.95, 10_000)
    partial = np.cumsum(w)
    assert abs(math.fsum(w)) < 1e-3
    assert np.all(np.diff(np.abs(partial[1:])) < 0)


@pytest.mark.parametrize("alpha", [0.3, 0.7, 0.95])
def test_gl_weights_sign_and_monotone(alpha):
    w = fracops.gl_weights(alpha, 200)
    assert w[0] == 1.0
    assert np.all(w[1:] < 0)
    assert np.all(np.diff(np.abs(w[1:])) < 0)


def test_caputo_of_constant_is_zero():
    g = Grid(1.0, 50)
    for a in (0.3, 0.9, 1.0):
        np.testing.assert_array_equal(fracops.caputo_apply(np.full(51, 7.0), a, g), 0.0)


def test_caputo_alpha_one_of_t_is_one():
    g = Grid(1.0, 10)
    d = fracops.caputo_apply(g.nodes, 1.0, g)
    assert d[0] == 0.0
    np.testing.assert_allclose(d[1:], 1.0, rtol=1e-12)


def test_caputo_of_t_half_order():
    g = Grid(1.0, 1000)
    d = fracops.caputo_apply(g.nodes, 0.5, g)
    assert d[-1] == pytest.approx(2.0 / math.sqrt(math.pi), abs=5e-3)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 0.95])
def test_caputo_t_squared_first_order_convergence(alpha):
    errs = []
    for n in (250, 500, 1000):
        g = Grid(1.0, n)
        exact = 2.0 / fracops.gamma(3.0 - alpha) * g.nodes ** (2.0 - alpha)
        errs.append(np.max(np.abs(fracops.caputo_apply(g.nodes**2, alpha, g) - exact)))
    assert errs[-1] <= 2e-2
    assert errs[0] / errs[1] >= 1.7 and errs[1] / errs[2] >= 1.7


def test_caputo_apply_batches_leading_axes():
    g = Grid(2.0, 40)
    rng = np.random.default_rng(1)
    F = rng.standard_normal((3, 2, 41))
    batched = fracops.caputo_apply(F, 0.8, g)
    for i in range(3):
        for j in range(2):
            np.testing.assert_allclose(batched[i, j], fracops.caputo_apply(F[i, j], 0.8, g), rtol=0, atol=1e-13)


def test_caputo_length_mismatch():
    with pytest.raises(InputError):
        fracops.caputo_apply(np.zeros(5), 0.5, Grid(1.0, 5))


def test_operator_matrix_matches_apply():
    g = Grid(1.0, 64)
    f = np.random.default_rng(3).standard_normal(65)
    D = fracops.caputo_operator_matrix(0.7, g)
    assert np.max(np.abs(D @ f - fracops.caputo_apply(f, 0.7, g))) <= 1e-14 * np.max(np.abs(D.entries))


def test_operator_matrix_structure():
    g = Grid(1.0, 20)
    D = fracops.caputo_operator_matrix(0.6, g).entries
    assert np.all(np.triu(D, 1) == 0.0)
    assert np.all(D[0] == 0.0)
    np.testing.assert_allclose(D @ np.ones(21), 0.0, atol=1e-12)


def test_operator_matrix_alpha_one_backward_difference():
    g = Grid(1.0, 5)
    D = fracops.caputo_operator_matrix(1.0, g).entries
    expected = np.zeros((6, 6))
    for k in range(1, 6):
        expected[k, k], expected[k, k - 1] = 5.0, -5.0
    np.testing.assert_allclose(D, expected, atol=1e-13)


# -- quadrature ----------------------------------------------------------------


def test_rl_alpha_one_of_t():
    g = Grid(1.0, 37)
    assert fracops.rl_integral(g.nodes, 1.0, g) == pytest.approx(0.5, abs=1e-12)


def test_rl_of_one_half_order():
    g = Grid(1.0, 100)
    assert fracops.rl_integral(np.ones(101), 0.5, g) == pytest.approx(1.1283792, abs=1e-6)


def test_rl_of_zero():
    g = Grid(3.0, 10)
    assert fracops.rl_integral(np.zeros(11), 0.7, g) == 0.0


def test_rl_exact_for_linear_integrand():
    # RL integral of t at order a over [0, T]: T^(a+1) / Gamma(a+2)
    g = Grid(2.0, 13)
    for a in (0.3, 0.8, 0.99):
        exact = 2.0 ** (a + 1.0) / fracops.gamma(a + 2.0)
        assert fracops.rl_integral(g.nodes, a, g) == pytest.approx(exact, rel=1e-12)


def test_rl_alpha_one_equals_trapezoid():
    g = Grid(4.0, 80)
    f = np.sin(g.nodes) + g.nodes**2
    assert abs(fracops.rl_integral(f, 1.0, g) - np.trapezoid(f, g.nodes)) <= 1e-12


# -- Mittag-Leffler --------------------------------------------------------------


def test_ml_at_zero():
    for a in (0.2, 0.5, 1.0):
        assert fracops.mittag_leffler(a, 0.0) == 1.0


def test_ml_alpha_one_is_exp_at_one():
    assert fracops.mittag_leffler(1.0, 1.0) == pytest.approx(math.e, abs=1e-12)


def test_ml_half_closed_form():
    assert fracops.mittag_leffler(0.5, 1.0) == pytest.approx(5.0089800, abs=1e-6)
    for z in (-2.0, -0.5, 0.7, 2.0):
        exact = math.exp(z * z) * special.erfc(-z)
        assert fracops.mittag_leffler(0.5, z) == pytest.approx(exact, rel=1e-10)


def test_ml_alpha_one_matches_exp_on_window():
    # relative to max(1, e^z): the alternating series cannot resolve e^-10
    # to 1e-10 relative in binary64.
    for z in np.linspace(-10.0, 10.0, 81):
        err = abs(fracops.mittag_leffler(1.0, z) - math.exp(z))
        assert err <= 1e-10 * max(1.0, math.exp(z))


def test_ml_refuses_catastrophic_cancellation():
    with pytest.raises(DomainError, match="cancels"):
        fracops.mittag_leffler(0.25, -3.0)


def test_ml_refuses_unconverged_series():
    with pytest.raises(DomainError, match="not converged"):
        fracops.mittag_leffler(0.125, -2.0)


def test_ml_domain_error():
    with pytest.raises(DomainError, match="50"):
        fracops.mittag_leffler(0.9, 51.0)
