"""Open-loop optimal solver by direct transcription.

The dynamics are collocated at nodes 1..N with the Grünwald–Letnikov
Caputo operator; node 0 carries the initial state. Writing ``y = x - x0``
the constraints read

    c * sum_{i<=k} w_{k-i} y_i - A_k y_k = B_k u_k + A_k x0 + d_k,   k = 1..N

(``c = h^-alpha``), a block lower-triangular system. States are eliminated
by forward substitution, ``y = S u + y_free``; the reduced Hessian in ``u``
is SPD and factored once per plant/weights/grid, so several solves with
different initial states or references share one factorization. The
dynamics multipliers ``nu`` come from backward substitution through the
transposed operator and give the costate ``lam_k = nu_k / c_k`` with
``c_k`` the running-cost quadrature weight.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from . import fracops
from ._backend import kernels
from .errors import ConvergenceError, InputError, SolverError, TheoremRangeWarning
from .fracops import FractionalOrder, Grid
from .model import TrackingProblem, cost_weights, evaluate_cost, sample_reference

__all__ = [
    "DiscretizedProblem",
    "Trajectory",
    "SolveReport",
    "LQCore",
    "discretize",
    "solve_linear",
    "solve_nonlinear",
    "solve",
    "optimality_residuals",
    "warn_theorem_range",
]

log = logging.getLogger(__name__)

CONDITION_LIMIT = 1e14


def warn_theorem_range(alpha, stacklevel=3):
    if not FractionalOrder(alpha).theorem_range:
        warnings.warn(
            f"alpha = {float(alpha):g} is outside (0.9, 1]; the optimality conditions "
            "are only stated there and residual_costate is not expected to be small",
            TheoremRangeWarning,
            stacklevel=stacklevel,
        )


@dataclass(frozen=True, eq=False)
class DiscretizedProblem:
    """Node-major samples of everything the transcription needs."""

    grid: Grid
    alpha: float
    A: np.ndarray  # (N+1, q, q)
    B: np.ndarray  # (N+1, q, r)
    d: np.ndarray  # (N+1, q)
    Q: np.ndarray  # (N+1, q, q)
    R: np.ndarray  # (N+1, r, r)
    T: np.ndarray  # (q, q)
    quad: np.ndarray  # (N+1,)
    ref: np.ndarray  # (q, N+1)
    x0: np.ndarray  # (q,)

    @property
    def state_dim(self):
        return self.A.shape[1]

    @property
    def control_dim(self):
        return self.B.shape[2]

    @cached_property
    def gl(self) -> np.ndarray:
        return fracops.gl_weights(self.alpha, self.grid.n_steps)

    @property
    def scale(self) -> float:
        return self.grid.h ** (-self.alpha)

    @cached_property
    def operator(self) -> fracops.OperatorMatrix:
        return fracops.caputo_operator_matrix(self.alpha, self.grid)

    def replace(self, **changes) -> "DiscretizedProblem":
        return dataclasses.replace(self, **changes)

    def state_weight(self, k: int) -> np.ndarray:
        W = self.quad[k] * self.Q[k]
        if k == self.grid.n_steps:
            W = W + self.T
        return W


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray  # (q, N+1)
    u: np.ndarray  # (r, N+1)
    lam: np.ndarray  # (q, N+1)
    cost: float


@dataclass(eq=False)
class SolveReport:
    cost: float
    residual_costate: float
    residual_stationarity: float
    residual_dynamics: float
    kkt_relative_residual: float
    linearization_iters: int
    grid: Grid
    alpha: float
    condition: float = float("nan")
    res_eq10: float | None = None
    res_eq11: float | None = None
    linearization: DiscretizedProblem | None = field(default=None, repr=False)
    trajectory: Trajectory | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "cost": self.cost,
            "residual_costate": self.residual_costate,
            "residual_stationarity": self.residual_stationarity,
            "residual_dynamics": self.residual_dynamics,
            "kkt_relative_residual": self.kkt_relative_residual,
            "linearization_iters": self.linearization_iters,
            "condition_estimate": self.condition,
            "grid": {"t_final": self.grid.t_final, "n_steps": self.grid.n_steps, "h": self.grid.h},
            "alpha": self.alpha,
        }
        if self.res_eq10 is not None:
            out["riccati_residuals"] = {"res_eq10": self.res_eq10, "res_eq11": self.res_eq11}
        return out


def discretize(problem: TrackingProblem, grid: Grid) -> DiscretizedProblem:
    """Sample a linear problem on ``grid``."""
    if not problem.is_linear:
        raise InputError("discretize needs a linear plant; use solve_nonlinear")
    if abs(grid.t_final - problem.t_final) > 1e-12 * problem.t_final:
        raise InputError(f"grid ends at {grid.t_final}, problem horizon is {problem.t_final}")
    A, B, d = problem.plant.sample(grid)
    Q, R = problem.weights.sample(grid)
    return DiscretizedProblem(
        grid=grid,
        alpha=problem.alpha,
        A=A,
        B=B,
        d=d,
        Q=Q,
        R=R,
        T=problem.weights.T,
        quad=cost_weights(problem.weights, grid),
        ref=sample_reference(problem.reference, grid),
        x0=problem.x0,
    )


def _is_time_invariant(M):
    return bool(np.all(M == M[1]))


def adjoint_apply(w, c, V):
    """``c * sum_{k>=i} w_{k-i} V_k`` for each node i (V node-major)."""
    n1 = V.shape[0]
    rev = V[::-1]
    out = np.empty_like(V)
    for j in range(V.shape[1]):
        out[:, j] = np.convolve(w[:n1], rev[:, j])[:n1][::-1]
    return c * out


class LQCore:
    """Reduced QP for one (plant, weights, grid); reusable across solves.

    Only the initial state, the reference and the drift may vary between
    calls to :meth:`solve`.
    """

    def __init__(self, dp: DiscretizedProblem):
        self.dp = dp
        N = dp.grid.n_steps
        q, r = dp.state_dim, dp.control_dim
        c = dp.scale
        eye = np.eye(q)
        self.step = c * eye - dp.A  # G_k
        self.step_t = c * eye - np.transpose(dp.A, (0, 2, 1))
        m = r * (N + 1)

        if _is_time_invariant(dp.A[1:]) and _is_time_invariant(dp.B[1:]):
            rhs = np.zeros((N + 1, q, r))
            rhs[1] = dp.B[1]
            phi = kernels.lower_solve(dp.gl, c, self.step, rhs)  # impulse response
            lag = np.arange(1, N + 1)[:, None] - np.arange(N + 1)[None, :]  # k - j
            blocks = np.where(
                (lag >= 0)[:, :, None, None] & (np.arange(N + 1) >= 1)[None, :, None, None],
                phi[np.clip(lag + 1, 0, N)],
                0.0,
            )  # (N, N+1, q, r)
            S = blocks.transpose(0, 2, 1, 3).reshape(N * q, m)
        else:
            rhs = np.zeros((N + 1, q, m))
            for k in range(1, N + 1):
                rhs[k, :, k * r:(k + 1) * r] = dp.B[k]
            S = kernels.lower_solve(dp.gl, c, self.step, rhs)[1:].reshape(N * q, m)
        self.S = S

        Wx = np.array([dp.state_weight(k) for k in range(1, N + 1)])  # (N, q, q)
        self.Wx = Wx
        WS = np.einsum("kij,kjm->kim", Wx, S.reshape(N, q, m)).reshape(N * q, m)
        H = S.T @ WS
        idx = np.arange(N + 1)
        Wu = dp.quad[:, None, None] * dp.R
        for k in idx:
            H[k * r:(k + 1) * r, k * r:(k + 1) * r] += Wu[k]
        H = 0.5 * (H + H.T)
        ev = np.linalg.eigvalsh(H)
        self.condition = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
        if not np.isfinite(self.condition) or self.condition > CONDITION_LIMIT:
            raise SolverError(
                f"reduced KKT system is singular or ill-conditioned "
                f"(condition estimate {self.condition:.3g})",
                condition=self.condition,
            )
        self.H = H
        self.chol = scipy.linalg.cho_factor(H, lower=True)

    def free_response(self, x0, d):
        dp = self.dp
        rhs = (np.einsum("kij,j->ki", dp.A, x0) + d)[:, :, None]
        return kernels.lower_solve(dp.gl, dp.scale, self.step, rhs)[:, :, 0]

    def solve(self, x0, ref, d):
        """Return ``(x, u, nu)``; x and u are ``(dim, N+1)``, nu is node-major."""
        dp = self.dp
        N = dp.grid.n_steps
        q, r = dp.state_dim, dp.control_dim
        x0 = np.asarray(x0, dtype=float)
        y_free = self.free_response(x0, d)
        e_free = (y_free[1:] + x0 - ref.T[1:])  # (N, q)
        g = self.S.T @ np.einsum("kij,kj->ki", self.Wx, e_free).reshape(-1)
        u = -scipy.linalg.cho_solve(self.chol, g)
        y = (self.S @ u).reshape(N, q) + y_free[1:]
        x = np.empty((q, N + 1))
        x[:, 0] = x0
        x[:, 1:] = (y + x0).T
        rhs = np.zeros((N + 1, q, 1))
        rhs[1:, :, 0] = np.einsum("kij,kj->ki", self.Wx, x[:, 1:].T - ref.T[1:])
        nu = kernels.upper_solve(dp.gl, dp.scale, self.step_t, rhs)[:, :, 0]
        return x, u.reshape(N + 1, r).T, nu

    def kkt_residual(self, x, u, nu, ref, d) -> float:
        """Largest relative residual over the three KKT blocks."""
        dp = self.dp
        Dx = fracops.caputo_apply(x, dp.alpha, dp.grid).T  # (N+1, q)
        Ax = np.einsum("kij,jk->ki", dp.A, x)
        Bu = np.einsum("kij,jk->ki", dp.B, u)
        dyn = (Dx - Ax - Bu - d)[1:]
        s_dyn = max(np.max(np.abs(t[1:])) for t in (Dx, Ax, Bu, d))

        Mt_nu = adjoint_apply(dp.gl, dp.scale, nu) - np.einsum("kji,kj->ki", dp.A, nu)
        We = np.zeros_like(nu)
        We[1:] = np.einsum("kij,kj->ki", self.Wx, x[:, 1:].T - ref.T[1:])
        xs = (Mt_nu - We)[1:]
        s_x = max(np.max(np.abs(Mt_nu[1:])), np.max(np.abs(We)))

        Wu = dp.quad[:, None] * np.einsum("kij,jk->ki", dp.R, u)
        Btnu = np.einsum("kji,kj->ki", dp.B, nu)
        us = Wu + Btnu
        s_u = max(np.max(np.abs(Wu)), np.max(np.abs(Btnu)))

        rel = 0.0
        for res, s in ((dyn, s_dyn), (xs, s_x), (us, s_u)):
            a = float(np.max(np.abs(res))) if res.size else 0.0
            rel = max(rel, a / s if s > 0 else a)
        return rel


def costate_from_multipliers(nu, quad):
    """``lam_k = nu_k / c_k`` for k >= 1; ``lam_0`` extrapolated linearly."""
    lam = np.empty((nu.shape[1], nu.shape[0]))
    lam[:, 1:] = (nu[1:] / quad[1:, None]).T
    lam[:, 0] = 2.0 * lam[:, 1] - lam[:, 2] if lam.shape[1] > 2 else lam[:, 1]
    return lam


def solve_discretized(dp: DiscretizedProblem, core: LQCore | None = None):
    """Solve a sampled linear problem; returns ``(x, u, lam, nu, core)``."""
    core = core or LQCore(dp)
    x, u, nu = core.solve(dp.x0, dp.ref, dp.d)
    return x, u, costate_from_multipliers(nu, dp.quad), nu, core


def _linear_residuals(x, u, lam, dp: DiscretizedProblem, f_true=None):
    grid = dp.grid
    e = x - dp.ref
    Dlam = fracops.caputo_apply(lam, dp.alpha, grid)
    costate = (
        np.einsum("kij,jk->ik", dp.Q, e) + np.einsum("kji,jk->ik", dp.A, lam) + Dlam
    )
    stat = np.einsum("kij,jk->ik", dp.R, u) + np.einsum("kji,jk->ik", dp.B, lam)
    Dx = fracops.caputo_apply(x, dp.alpha, grid)
    if f_true is None:
        rhs = np.einsum("kij,jk->ik", dp.A, x) + np.einsum("kij,jk->ik", dp.B, u) + dp.d.T
    else:
        rhs = f_true
    dyn = rhs - Dx
    N = grid.n_steps
    return (
        float(np.max(np.abs(costate[:, 1:N]))) if N > 1 else 0.0,
        float(np.max(np.abs(stat[:, 1:]))),
        float(np.max(np.abs(dyn[:, 1:]))),
    )


def linearize(problem: TrackingProblem, grid: Grid, x, u) -> DiscretizedProblem:
    """Linearization of a nonlinear problem about sampled ``(x, u)``."""
    plant = problem.plant
    t = grid.nodes
    A = np.array([plant.jacobian_x(x[:, k], u[:, k], t[k]) for k in range(grid.size)], dtype=float)
    B = np.array([plant.jacobian_u(x[:, k], u[:, k], t[k]) for k in range(grid.size)], dtype=float)
    f = np.array([plant.f(x[:, k], u[:, k], t[k]) for k in range(grid.size)], dtype=float)
    d = f - np.einsum("kij,jk->ki", A, x) - np.einsum("kij,jk->ki", B, u)
    Q, R = problem.weights.sample(grid)
    return DiscretizedProblem(
        grid=grid,
        alpha=problem.alpha,
        A=A,
        B=B,
        d=d,
        Q=Q,
        R=R,
        T=problem.weights.T,
        quad=cost_weights(problem.weights, grid),
        ref=sample_reference(problem.reference, grid),
        x0=problem.x0,
    )


def nonlinear_rhs(problem: TrackingProblem, grid: Grid, x, u) -> np.ndarray:
    t = grid.nodes
    return np.array(
        [problem.plant.f(x[:, k], u[:, k], t[k]) for k in range(grid.size)], dtype=float
    ).T


def optimality_residuals(traj: Trajectory, problem: TrackingProblem, grid: Grid):
    """Max-norm residuals of the costate, stationarity and state equations.

    Returns ``(residual_costate, residual_stationarity, residual_dynamics)``.
    The costate residual uses the left Caputo derivative of the costate
    samples over interior nodes; for nonlinear plants the Jacobians are
    evaluated along ``traj`` and the state residual uses the true dynamics.
    """
    if problem.is_linear:
        dp = discretize(problem, grid)
        return _linear_residuals(traj.x, traj.u, traj.lam, dp)
    dp = linearize(problem, grid, traj.x, traj.u)
    f_true = nonlinear_rhs(problem, grid, traj.x, traj.u)
    return _linear_residuals(traj.x, traj.u, traj.lam, dp, f_true=f_true)


def _report(problem, grid, traj, kkt, iters, condition, f_true=None, dp=None):
    if dp is None:
        dp = discretize(problem, grid)
    rc, rs, rd = _linear_residuals(traj.x, traj.u, traj.lam, dp, f_true=f_true)
    return SolveReport(
        cost=traj.cost,
        residual_costate=rc,
        residual_stationarity=rs,
        residual_dynamics=rd,
        kkt_relative_residual=kkt,
        linearization_iters=iters,
        grid=grid,
        alpha=problem.alpha,
        condition=condition,
    )


def solve_linear(problem: TrackingProblem, grid: Grid, core: LQCore | None = None):
    """Open-loop optimum of a linear tracking problem.

    Returns
    -------
    (Trajectory, SolveReport)

    Raises
    ------
    SolverError
        If the reduced KKT system is singular or its condition estimate
        exceeds 1e14.
    """
    warn_theorem_range(problem.alpha)
    dp = discretize(problem, grid)
    x, u, lam, nu, core = solve_discretized(dp, core)
    traj = Trajectory(x, u, lam, evaluate_cost(x, u, problem, grid))
    kkt = core.kkt_residual(x, u, nu, dp.ref, dp.d)
    return traj, _report(problem, grid, traj, kkt, 0, core.condition, dp=dp)


def solve_nonlinear(
    problem: TrackingProblem,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 50,
    damping: bool = True,
):
    """Successive linearization around the current iterate.

    Starts from ``x = x0, u = 0`` and solves the linearized problem until the
    max-norm change of ``(x, u)`` drops to ``tol``. With ``damping`` the step
    is halved whenever the change has grown twice in a row.

    Raises
    ------
    ConvergenceError
        After ``max_iter`` iterations without meeting ``tol``.
    """
    warn_theorem_range(problem.alpha)
    if problem.is_linear:
        raise InputError("solve_nonlinear needs a nonlinear plant")
    if abs(grid.t_final - problem.t_final) > 1e-12 * problem.t_final:
        raise InputError(f"grid ends at {grid.t_final}, problem horizon is {problem.t_final}")
    r = problem.control_dim
    xb = np.tile(problem.x0[:, None], (1, grid.size))
    ub = np.zeros((r, grid.size))
    changes = []
    step = 1.0
    for it in range(1, max_iter + 1):
        dp = linearize(problem, grid, xb, ub)
        x, u, lam, nu, core = solve_discretized(dp)
        change = max(float(np.max(np.abs(x - xb))), float(np.max(np.abs(u - ub))))
        changes.append(change)
        log.debug("linearization %d: change %.3e", it, change)
        if change <= tol:
            break
        if damping and len(changes) >= 3 and changes[-1] > changes[-2] > changes[-3]:
            step = 0.5
        xb = xb + step * (x - xb)
        ub = ub + step * (u - ub)
    else:
        raise ConvergenceError(
            f"successive linearization did not converge in {max_iter} iterations "
            f"(last change {changes[-1]:.3g})",
            last_change=changes[-1],
        )
    traj = Trajectory(x, u, lam, evaluate_cost(x, u, problem, grid))
    kkt = core.kkt_residual(x, u, nu, dp.ref, dp.d)
    f_true = nonlinear_rhs(problem, grid, x, u)
    report = _report(problem, grid, traj, kkt, it, core.condition, f_true=f_true, dp=dp)
    report.linearization = dp
    return traj, report


def solve(problem: TrackingProblem, grid: Grid, **kwargs):
    """Dispatch to :func:`solve_linear` or :func:`solve_nonlinear`."""
    if problem.is_linear:
        return solve_linear(problem, grid, **kwargs)
    return solve_nonlinear(problem, grid, **kwargs)
