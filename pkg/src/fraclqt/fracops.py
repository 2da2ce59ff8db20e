r"""Fractional-calculus kernel.

Grünwald–Letnikov weights and the left Caputo derivative on a uniform grid,
its dense operator matrix, product-trapezoid quadrature for the constant
Riemann–Liouville integral, the one-parameter Mittag-Leffler function and a
Lanczos gamma function.

The Caputo approximation used throughout is

.. math::

    (D^\alpha f)_k = h^{-\alpha} \sum_{j=0}^{k} w_j (f_{k-j} - f_0),
    \qquad (D^\alpha f)_0 = 0,

i.e. the Grünwald–Letnikov sum applied to :math:`f - f(0)`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DomainError, InputError

__all__ = [
    "FractionalOrder",
    "Grid",
    "OperatorMatrix",
    "gamma",
    "lgamma",
    "gl_weights",
    "caputo_apply",
    "caputo_operator_matrix",
    "rl_weights",
    "rl_integral",
    "trapezoid_weights",
    "mittag_leffler",
]

THEOREM_RANGE = (0.9, 1.0)


@dataclass(frozen=True)
class FractionalOrder:
    """Differentiation order in (0, 1]."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v <= 1.0) or math.isnan(v):
            raise DomainError(f"fractional order must lie in (0, 1], got {self.value!r}")
        object.__setattr__(self, "value", v)

    @property
    def theorem_range(self) -> bool:
        """True iff the order lies in (0.9, 1]."""
        return THEOREM_RANGE[0] < self.value <= THEOREM_RANGE[1]

    def __float__(self):
        return self.value


def as_order(alpha) -> float:
    """Validate ``alpha`` and return it as a float."""
    if isinstance(alpha, FractionalOrder):
        return alpha.value
    return FractionalOrder(alpha).value


@dataclass(frozen=True)
class Grid:
    """Uniform mesh ``t_k = k*h`` on ``[0, t_final]``."""

    t_final: float
    n_steps: int

    def __post_init__(self):
        if not (float(self.t_final) > 0.0) or not math.isfinite(self.t_final):
            raise InputError(f"t_final must be positive, got {self.t_final!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise InputError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        object.__setattr__(self, "t_final", float(self.t_final))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def h(self) -> float:
        return self.t_final / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    @property
    def size(self) -> int:
        return self.n_steps + 1

    def refine(self, factor: int) -> "Grid":
        return Grid(self.t_final, self.n_steps * factor)


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense lower-triangular matrix realising :func:`caputo_apply`."""

    entries: np.ndarray
    alpha: float
    h: float

    def __matmul__(self, other):
        return self.entries @ other


# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _lanczos_sum(x):
    # x is the shifted argument (z - 1)
    a = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        a += _LANCZOS_COEF[i] / (x + i)
    return a


def gamma(x: float) -> float:
    """Gamma function by the Lanczos approximation (reflection below 1/2)."""
    x = float(x)
    if x < 0.5:
        s = math.sin(math.pi * x)
        if s == 0.0:
            raise DomainError(f"gamma has a pole at {x}")
        return math.pi / (s * gamma(1.0 - x))
    if x == math.floor(x) and x <= 23.0:
        return float(math.factorial(int(x) - 1))
    x -= 1.0
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * _lanczos_sum(x)


def lgamma(x: float) -> float:
    """log|Gamma(x)| for x > 0, same Lanczos series as :func:`gamma`."""
    x = float(x)
    if x <= 0.0:
        raise DomainError(f"lgamma is only provided for x > 0, got {x}")
    if x < 0.5:
        return math.log(math.pi / math.sin(math.pi * x)) - lgamma(1.0 - x)
    x -= 1.0
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * math.log(t) - t + math.log(_lanczos_sum(x))


def gl_weights(alpha, n: int) -> np.ndarray:
    """Grünwald–Letnikov weights ``w_0..w_n``.

    ``w_0 = 1`` and ``w_k = w_{k-1} (1 - (alpha + 1)/k)``.
    """
    if n < 0:
        raise InputError(f"n must be non-negative, got {n}")
    return kernels.gl_weights(as_order(alpha), int(n))


def _check_samples(f, grid):
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != grid.size:
        raise InputError(
            f"samples have {f.shape[-1]} nodes, grid has {grid.size} (n_steps + 1)"
        )
    return f


def caputo_apply(f_samples, alpha, grid: Grid) -> np.ndarray:
    """Left Caputo derivative of sampled data on ``grid``.

    ``f_samples`` may be a vector of ``n_steps + 1`` values or an array whose
    last axis runs over nodes (each leading index is differentiated
    independently). Node 0 is reported as 0.
    """
    a = as_order(alpha)
    f = _check_samples(f_samples, grid)
    shape = f.shape
    flat = f.reshape(-1, grid.size).T
    w = kernels.gl_weights(a, grid.n_steps)
    g = kernels.caputo_sums(w, np.ascontiguousarray(flat)) * grid.h ** (-a)
    g[0, :] = 0.0
    return g.T.reshape(shape)


def caputo_operator_matrix(alpha, grid: Grid) -> OperatorMatrix:
    """Matrix ``D`` with ``D @ f == caputo_apply(f)`` for every sample vector.

    Row k holds ``h^-alpha w_j`` at column ``k - j`` plus the correction
    ``-h^-alpha sum_{j<=k} w_j`` at column 0, which makes every row sum to 0.
    """
    a = as_order(alpha)
    n = grid.n_steps
    w = kernels.gl_weights(a, n)
    c = grid.h ** (-a)
    k = np.arange(n + 1)
    lag = k[:, None] - k[None, :]
    D = np.where(lag >= 0, w[np.clip(lag, 0, n)], 0.0) * c
    D[:, 0] -= c * np.cumsum(w)
    D[0, :] = 0.0
    return OperatorMatrix(D, a, grid.h)


def trapezoid_weights(grid: Grid) -> np.ndarray:
    q = np.full(grid.size, grid.h)
    q[0] = q[-1] = 0.5 * grid.h
    return q


def rl_weights(alpha1, grid: Grid) -> np.ndarray:
    """Quadrature weights ``c_k`` with ``sum c_k f_k`` = the RL integral of the
    piecewise-linear interpolant of ``f`` over ``[0, t_final]``.

    The kernel ``(t_f - t)^(alpha1 - 1)/Gamma(alpha1)`` is integrated exactly
    against each hat function; the endpoint singularity is never evaluated.
    For ``alpha1 == 1`` these are the trapezoid weights.
    """
    a = as_order(alpha1)
    if a == 1.0:
        return trapezoid_weights(grid)
    s = grid.t_final - grid.nodes
    s[-1] = 0.0
    sb, sa = s[:-1], s[1:]  # interval [t_k, t_{k+1}] maps to s in [sa, sb]
    p1 = (sb ** (a + 1.0) - sa ** (a + 1.0)) / (a + 1.0)
    p0 = (sb**a - sa**a) / a
    h = grid.h
    left = (p1 - sa * p0) / h  # weight of f_k on its right interval
    right = (sb * p0 - p1) / h  # weight of f_{k+1} on its left interval
    c = np.zeros(grid.size)
    c[:-1] += left
    c[1:] += right
    return c / gamma(a)


def rl_integral(f_samples, alpha1, grid: Grid) -> float:
    """Constant Riemann–Liouville integral of order ``alpha1`` over the grid."""
    f = _check_samples(f_samples, grid)
    if f.ndim != 1:
        raise InputError("rl_integral expects a single sample vector")
    return float(rl_weights(alpha1, grid) @ f)


ML_SAFE_WINDOW = 50.0


def mittag_leffler(alpha, z: float, max_terms: int = 1000) -> float:
    """One-parameter Mittag-Leffler function by its power series.

    Raises
    ------
    DomainError
        If ``|z| > 50``; if the series has not converged after
        ``max_terms`` terms or a term overflows; or if the alternating series
        cancels so badly that the rounding error of its largest term (about
        1e-15 of it) exceeds 1e-8 of ``max(1, |E|)``. Small ``alpha`` hits
        these well inside the window.
    """
    a = as_order(alpha)
    z = float(z)
    if abs(z) > ML_SAFE_WINDOW:
        raise DomainError(
            f"mittag_leffler series is only used for |z| <= {ML_SAFE_WINDOW:g}, got z={z}"
        )
    if z == 0.0:
        return 1.0
    logz = math.log(abs(z))
    neg = z < 0.0
    terms = [1.0]
    peak = 1.0
    for m in range(1, max_terms + 1):
        try:
            mag = math.exp(m * logz - lgamma(a * m + 1.0))
        except OverflowError:
            raise DomainError(f"mittag_leffler series overflows at alpha={a:g}, z={z:g}") from None
        terms.append(-mag if (neg and m % 2) else mag)
        peak = max(peak, mag)
        # past the peak the terms decay monotonically
        if mag < peak and mag < 1e-16 * abs(math.fsum(terms)):
            break
    else:
        raise DomainError(
            f"mittag_leffler series not converged after {max_terms} terms at alpha={a:g}, z={z:g}"
        )
    total = math.fsum(terms)
    if not math.isfinite(total):
        raise DomainError(f"mittag_leffler series overflows at alpha={a:g}, z={z:g}")
    if peak * 1e-15 > 1e-8 * max(1.0, abs(total)):
        raise DomainError(
            f"mittag_leffler series cancels catastrophically at alpha={a:g}, z={z:g} "
            f"(largest term {peak:.3g})"
        )
    return total
