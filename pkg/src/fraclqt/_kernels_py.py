"""Pure-NumPy implementations of the hot Grünwald–Letnikov kernels.

These mirror the compiled versions in ``_kernels.pyx`` one-for-one and are
used when the extension is not built (or ``FRACLQT_PURE_PYTHON=1``).

Array conventions are node-major: a sampled vector signal is ``(n+1, q)``
and a stack of right-hand sides is ``(n+1, q, m)``.
"""

import numpy as np

from .errors import SolverError


def gl_weights(alpha, n):
    w = np.empty(n + 1)
    w[0] = 1.0
    for k in range(1, n + 1):
        w[k] = w[k - 1] * (1.0 - (alpha + 1.0) / k)
    return w


def caputo_sums(w, F):
    """G[k] = sum_{j<=k} w[j] * (F[k-j] - F[0]) for every column of F."""
    F = np.asarray(F, dtype=float)
    n1, m = F.shape
    G = np.empty_like(F)
    for c in range(m):
        col = F[:, c] - F[0, c]
        G[:, c] = np.convolve(w[:n1], col)[:n1]
    return G


def _solve(M, rhs, k):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise SolverError(f"singular step matrix at node {k}") from None


def lower_solve(w, c, M, R):
    """Forward substitution through the block lower-triangular GL operator.

    For k = 1..n solves ``M[k] Y[k] = R[k] - c * sum_{i=1}^{k-1} w[k-i] Y[i]``
    with ``Y[0] = 0``.
    """
    n1, q, m = R.shape
    Y = np.zeros((n1, q, m))
    for k in range(1, n1):
        rhs = R[k]
        if k > 1:
            hist = np.tensordot(w[k - 1:0:-1], Y[1:k], axes=1)
            rhs = rhs - c * hist
        Y[k] = _solve(M[k], rhs, k)
    return Y


def upper_solve(w, c, Mt, R):
    """Backward substitution through the transposed GL operator.

    For k = n..1 solves ``Mt[k] V[k] = R[k] - c * sum_{i=k+1}^{n} w[i-k] V[i]``
    with ``V[0] = 0``.
    """
    n1, q, m = R.shape
    n = n1 - 1
    V = np.zeros((n1, q, m))
    for k in range(n, 0, -1):
        rhs = R[k]
        if k < n:
            hist = np.tensordot(w[1:n - k + 1], V[k + 1:], axes=1)
            rhs = rhs - c * hist
        V[k] = _solve(Mt[k], rhs, k)
    return V
