"""Time-domain simulation of Caputo dynamics, open or closed loop.

Stepping uses the same Grünwald–Letnikov operator as the transcription, so
replaying an optimal control reproduces the optimal state to rounding.
Linear plants are stepped implicitly (one small solve per node, feedback
included); nonlinear plants use a Newton iteration per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fracops
from ._backend import kernels
from .errors import ConvergenceError, InputError
from .fracops import Grid, as_order
from .model import LinearPlant

__all__ = [
    "TrackingMetrics",
    "SimulationResult",
    "simulate_open_loop",
    "simulate_closed_loop",
    "tracking_metrics",
]

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 100


@dataclass(frozen=True)
class TrackingMetrics:
    ise: float
    max_err: float
    control_energy: float


@dataclass(frozen=True, eq=False)
class SimulationResult:
    x: np.ndarray  # (q, N+1)
    u: np.ndarray  # (r, N+1)
    metrics: TrackingMetrics | None = None


def _trapz(values, grid):
    return float(fracops.trapezoid_weights(grid) @ values)


def tracking_metrics(result, reference, grid: Grid, components=None) -> TrackingMetrics:
    """ISE and max error of ``x - r`` and the control energy, trapezoid rule.

    ``components`` restricts the error to a subset of state indices.
    """
    x, u = np.asarray(result.x), np.asarray(result.u)
    r = np.asarray(reference, dtype=float)
    if r.shape != x.shape or x.shape[1] != grid.size or u.shape[1] != grid.size:
        raise InputError(f"shape mismatch: x {x.shape}, reference {r.shape}, grid {grid.size}")
    e = x - r
    if components is not None:
        e = e[list(components)]
    return TrackingMetrics(
        ise=_trapz(np.sum(e * e, axis=0), grid),
        max_err=float(np.max(np.abs(e))),
        control_energy=_trapz(np.sum(u * u, axis=0), grid),
    )


def _linear_step(plant: LinearPlant, K, l, x0, alpha, grid):
    A, B, d = plant.sample(grid)
    c = grid.h ** (-alpha)
    w = fracops.gl_weights(alpha, grid.n_steps)
    BK = np.einsum("kij,kjl->kil", B, K)
    M = c * np.eye(plant.state_dim) - A + BK
    rhs = np.einsum("kij,j->ki", A - BK, x0) + np.einsum("kij,kj->ki", B, l) + d
    y = kernels.lower_solve(w, c, M, rhs[:, :, None])[:, :, 0]
    x = (y + x0).T
    x[:, 0] = x0
    u = -np.einsum("kij,jk->ik", K, x) + l.T
    return x, u


def _nonlinear_step(plant, K, l, x0, alpha, grid):
    # Newton on y_k + hist_k - h^a f(x_k, l_k - K_k x_k) = 0, seeded at y_{k-1}.
    # Plain fixed-point iteration only contracts when h^a ||df/dx - df/du K||
    # is below 1, which large synthesized gains can violate.
    n1 = grid.size
    q = plant.state_dim
    t = grid.nodes
    ha = grid.h**alpha
    eye = np.eye(q)
    w = fracops.gl_weights(alpha, grid.n_steps)
    Y = np.zeros((n1, q))  # x - x0
    for k in range(1, n1):
        hist = w[1:k] @ Y[k - 1:0:-1] if k > 1 else np.zeros(q)
        y = Y[k - 1].copy()
        for _ in range(FIXED_POINT_MAX_ITER):
            xk = x0 + y
            uk = l[k] - K[k] @ xk
            F = y + hist - ha * np.asarray(plant.f(xk, uk, t[k]), dtype=float)
            J = eye - ha * (plant.jacobian_x(xk, uk, t[k]) - plant.jacobian_u(xk, uk, t[k]) @ K[k])
            try:
                step = np.linalg.solve(J, F)
            except np.linalg.LinAlgError:
                raise ConvergenceError(f"singular Newton matrix at node {k} (t = {t[k]:.6g})") from None
            y = y - step
            delta = float(np.max(np.abs(step)))
            if delta <= FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(x0 + y)))):
                break
        else:
            raise ConvergenceError(
                f"nonlinear stepping did not converge at node {k} (t = {t[k]:.6g}, "
                f"last change {delta:.3g})",
                last_change=delta,
            )
        Y[k] = y
    x = (Y + x0).T
    x[:, 0] = x0
    u = -np.einsum("kij,jk->ik", K, x) + l.T
    return x, u


def _run(plant, K, l, x0, alpha, grid, reference):
    alpha = as_order(alpha)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != plant.state_dim:
        raise InputError(f"x0 has length {x0.size}, plant state dimension is {plant.state_dim}")
    if isinstance(plant, LinearPlant):
        x, u = _linear_step(plant, K, l, x0, alpha, grid)
    else:
        x, u = _nonlinear_step(plant, K, l, x0, alpha, grid)
    ref = np.zeros_like(x) if reference is None else np.asarray(reference, dtype=float)
    result = SimulationResult(x, u)
    return SimulationResult(x, u, tracking_metrics(result, ref, grid))


def simulate_open_loop(plant, u, x0, alpha, grid: Grid, reference=None) -> SimulationResult:
    """Propagate the plant under sampled controls ``u`` of shape ``(r, N+1)``.

    ``reference`` (``(q, N+1)`` samples) only feeds the metrics.
    """
    u = np.asarray(u, dtype=float)
    r, q = plant.control_dim, plant.state_dim
    if u.shape != (r, grid.size):
        raise InputError(f"u must be {(r, grid.size)}, got {u.shape}")
    K = np.zeros((grid.size, r, q))
    return _run(plant, K, u.T.copy(), x0, alpha, grid, reference)


def simulate_closed_loop(plant, gains, x0, grid: Grid, reference=None, alpha=None) -> SimulationResult:
    """Propagate the plant under ``u_k = -K(t_k) x_k + l(t_k)``.

    ``gains`` is a :class:`~fraclqt.synthesis.GainSchedule` on ``grid``; the
    fractional order defaults to the schedule's.
    """
    if gains.grid.n_steps != grid.n_steps or gains.grid.t_final != grid.t_final:
        raise InputError("gain schedule grid differs from simulation grid")
    K = np.ascontiguousarray(np.transpose(gains.K, (2, 0, 1)))
    l = np.ascontiguousarray(gains.l.T)
    return _run(plant, K, l, x0, gains.alpha if alpha is None else alpha, grid, reference)
