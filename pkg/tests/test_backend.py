import os
import subprocess
import sys

import numpy as np
import pytest

from fraclqt import _backend, _kernels_py

fast = _backend.compiled_kernels()
needs_compiled = pytest.mark.skipif(fast is None, reason="compiled extension not built")


def case(n=60, q=3, m=2, alpha=0.87, seed=0):
    rng = np.random.default_rng(seed)
    c = (1.0 / n) ** (-alpha)
    w = _kernels_py.gl_weights(alpha, n)
    A = 0.3 * rng.standard_normal((n + 1, q, q))
    M = np.ascontiguousarray(c * np.eye(q) - A)
    Mt = np.ascontiguousarray(np.transpose(M, (0, 2, 1)))
    return w, c, M, Mt, rng.standard_normal((n + 1, q)), rng.standard_normal((n + 1, q, m))


def test_backend_name_is_consistent():
    assert _backend.BACKEND in ("cython", "python")
    if _backend.BACKEND == "cython":
        assert _backend.kernels is fast
    else:
        assert _backend.kernels is _kernels_py


@needs_compiled
@pytest.mark.parametrize("alpha", [0.3, 0.9, 1.0])
def test_gl_weights_agree(alpha):
    np.testing.assert_allclose(fast.gl_weights(alpha, 500), _kernels_py.gl_weights(alpha, 500), rtol=1e-13, atol=0)


@needs_compiled
def test_caputo_sums_agree():
    w, _, _, _, F, _ = case()
    np.testing.assert_allclose(fast.caputo_sums(w, F), _kernels_py.caputo_sums(w, F), rtol=1e-12, atol=1e-12)


@needs_compiled
def test_triangular_solves_agree():
    w, c, M, Mt, _, R = case()
    np.testing.assert_allclose(fast.lower_solve(w, c, M, R), _kernels_py.lower_solve(w, c, M, R), rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(fast.upper_solve(w, c, Mt, R), _kernels_py.upper_solve(w, c, Mt, R), rtol=1e-11, atol=1e-12)


def test_lower_solve_inverts_operator():
    # (c D_GL - A_k) applied to the solution returns the right-hand side
    w, c, M, _, _, R = case(n=20, m=1)
    Y = _kernels_py.lower_solve(w, c, M, R)
    n1 = Y.shape[0]
    for k in range(1, n1):
        lhs = M[k] @ Y[k] + c * np.einsum("j,jab->ab", w[1 : k + 1], Y[k - 1 :: -1][:k])
        np.testing.assert_allclose(lhs, R[k], rtol=1e-10, atol=1e-10)


def test_pure_python_switch():
    code = "import fraclqt._backend as b; print(b.BACKEND)"
    env = dict(os.environ, FRACLQT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_solver_results_match_across_backends():
    code = (
        "import warnings; warnings.simplefilter('ignore');"
        "from fraclqt import model, transcribe; from fraclqt.fracops import Grid;"
        "p = model.builtin_problem('mass_spring'); t, _ = transcribe.solve(p, Grid(10.0, 120));"
        "print(repr(t.cost))"
    )
    costs = []
    for flag in ("0", "1"):
        env = dict(os.environ, FRACLQT_PURE_PYTHON=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        costs.append(float(out.stdout))
    assert costs[0] == pytest.approx(costs[1], rel=1e-12)
