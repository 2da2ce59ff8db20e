"""Closed-loop gain synthesis from solve ensembles.

P(t) is extracted rather than integrated: q regulator solves from the
standard basis give state and costate snapshot matrices X(t_k), Lam(t_k)
and ``P(t_k) = Lam(t_k) X(t_k)^-1``. The feedforward comes from rearranging
``u* = -K x* + l`` along the tracking optimum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import fracops
from .errors import InputError, SynthesisError
from .fracops import Grid
from .model import TrackingProblem, co_reference, sample_reference
from .transcribe import (
    DiscretizedProblem,
    LQCore,
    Trajectory,
    costate_from_multipliers,
    discretize,
    solve_linear,
    solve_nonlinear,
)

__all__ = [
    "GainSchedule",
    "riccati_from_ensemble",
    "kalman_gain",
    "feedforward",
    "riccati_residuals",
    "synthesize",
]

log = logging.getLogger(__name__)

RIDGE = 1e-10
RIDGE_CONDITION = 1e10
RESCUE_LIMIT = 1e15


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Sampled P, K, z, l; arrays are node-last, e.g. P is ``(q, q, N+1)``.

    ``P`` is stored symmetrized. ``P_raw`` is the extraction ``Lam X^-1``
    itself, which satisfies ``lam = P_raw (x - r) + z`` exactly on the grid;
    ``K`` and ``z`` are built from it. For alpha < 1 the two differ by an
    amount that does not vanish under refinement (see ``asymmetry``).
    """

    P: np.ndarray
    K: np.ndarray
    z: np.ndarray
    l: np.ndarray
    grid: Grid
    alpha: float
    asymmetry: float = 0.0
    max_condition: float = 1.0
    terminal_mismatch: float = float("nan")
    P_raw: np.ndarray | None = None

    def gain_at(self, k: int) -> np.ndarray:
        return self.K[:, :, k]


@dataclass(frozen=True, eq=False)
class RiccatiExtraction:
    P: np.ndarray  # (q, q, N+1), symmetrized
    P_raw: np.ndarray  # Lam X^-1 before symmetrization
    asymmetry: float  # max_k ||P - P^T||_F / ||P||_F before symmetrization
    max_condition: float  # max_k cond(X(t_k))
    states: np.ndarray  # X, (q, q, N+1)
    costates: np.ndarray  # Lam, (q, q, N+1)


def riccati_from_ensemble(
    problem: TrackingProblem,
    grid: Grid,
    linearization: DiscretizedProblem | None = None,
    core: LQCore | None = None,
) -> RiccatiExtraction:
    """Extract P(t_k) from q regulator solves started at e_1..e_q.

    For nonlinear problems pass the final ``linearization`` from
    :func:`solve_nonlinear`; its drift is ignored (regulator ensemble).

    Raises
    ------
    SynthesisError
        If a state snapshot X(t_k) is too ill-conditioned for the ridge
        fallback (condition above 1e15).
    """
    if linearization is None:
        if not problem.is_linear:
            raise InputError("nonlinear problems need the final linearization")
        dp = discretize(problem, grid)
    else:
        dp = linearization
    if core is None or core.dp.A is not dp.A:
        core = LQCore(dp)
    q = dp.state_dim
    N = grid.n_steps
    zero_ref = np.zeros((q, N + 1))
    zero_d = np.zeros((N + 1, q))
    X = np.empty((q, q, N + 1))
    Lam = np.empty((q, q, N + 1))
    for i in range(q):
        x, _, nu = core.solve(np.eye(q)[i], zero_ref, zero_d)
        X[:, i, :] = x
        Lam[:, i, :] = costate_from_multipliers(nu, dp.quad)

    P = np.empty((q, q, N + 1))
    P_raw = np.empty((q, q, N + 1))
    asym = 0.0
    worst = 1.0
    for k in range(N + 1):
        Xk, Lk = X[:, :, k], Lam[:, :, k]
        cond = np.linalg.cond(Xk)
        worst = max(worst, cond)
        if not np.isfinite(cond) or cond > RESCUE_LIMIT:
            raise SynthesisError(
                f"state snapshot X(t_{k}) is rank-deficient (condition estimate {cond:.3g})"
            )
        if cond > RIDGE_CONDITION:
            # least squares with ridge: P = Lam X^T (X X^T + ridge I)^-1
            G = Xk @ Xk.T + RIDGE * np.eye(q)
            Pk = scipy.linalg.solve(G, Xk @ Lk.T, assume_a="pos").T
        else:
            Pk = np.linalg.solve(Xk.T, Lk.T).T
        nrm = np.linalg.norm(Pk)
        if nrm > 0:
            asym = max(asym, float(np.linalg.norm(Pk - Pk.T) / nrm))
        P_raw[:, :, k] = Pk
        P[:, :, k] = 0.5 * (Pk + Pk.T)
    if worst > RIDGE_CONDITION:
        log.warning("ridge regularisation used; worst snapshot condition %.3g", worst)
    return RiccatiExtraction(P, P_raw, asym, worst, X, Lam)


def kalman_gain(P, problem: TrackingProblem, grid: Grid, linearization=None) -> np.ndarray:
    """``K(t_k) = R(t_k)^-1 B(t_k)^T P(t_k)`` by Cholesky solves; ``(r, q, N+1)``."""
    if linearization is not None:
        B, R = linearization.B, linearization.R
    elif problem.is_linear:
        _, B, _ = problem.plant.sample(grid)
        _, R = problem.weights.sample(grid)
    else:
        raise InputError("nonlinear problems need the final linearization for B(t)")
    P = np.asarray(P, dtype=float)
    if P.shape[-1] != grid.size:
        raise InputError(f"P has {P.shape[-1]} nodes, grid has {grid.size}")
    K = np.empty((B.shape[2], B.shape[1], grid.size))
    for k in range(grid.size):
        try:
            cf = scipy.linalg.cho_factor(R[k], lower=True)
        except np.linalg.LinAlgError:
            raise InputError(f"R(t_{k}) is not positive definite") from None
        K[:, :, k] = scipy.linalg.cho_solve(cf, B[k].T @ P[:, :, k])
    return K


def feedforward(problem: TrackingProblem, grid: Grid, K, tracking_traj: Trajectory, P=None):
    """Feedforward ``l = u* + K x*`` and offset ``z = lam* - P (x* - r)``.

    The control at node 0 does not enter the discrete dynamics (they are
    collocated at nodes 1..N), so ``u*_0 = 0`` and ``l_0 = K_0 x0``; the law
    then reproduces ``u*`` at every node of the nominal trajectory.

    Returns ``(l, z)``; ``z`` is None when ``P`` is not given.
    """
    x, u = tracking_traj.x, tracking_traj.u
    if x.shape[1] != grid.size or K.shape[-1] != grid.size:
        raise InputError("gain schedule and trajectory must share the grid")
    l = u + np.einsum("ijk,jk->ik", K, x)
    z = None
    if P is not None:
        r = sample_reference(problem.reference, grid)
        z = tracking_traj.lam - np.einsum("ijk,jk->ik", P, x - r)
    return l, z


def _frac_or_identity(f, order, grid):
    if order <= 0.0:
        return np.array(f, dtype=float)
    return fracops.caputo_apply(f, order, grid)


def _central_diff(F, h):
    D = np.full_like(F, np.nan)
    D[..., 1:-1] = (F[..., 2:] - F[..., :-2]) / (2.0 * h)
    return D


def riccati_residuals(P, z, traj: Trajectory, problem: TrackingProblem, grid: Grid, linearization=None):
    """Max interior-node residuals of the Riccati and offset equations.

    The Riccati residual is evaluated along ``traj.x`` as
    ``P' x - D^(1-a)[-Q x - A'P x] + P D^(1-a)[A x - B R^-1 B' P x]`` and the
    offset residual as ``z' + D^(1-a)[A' z] - P D^(1-a)[B R^-1 B' z - v]``,
    with central differences for d/dt and ``D^0`` the identity.

    The max runs over nodes 2..N-2: the central stencils at nodes 1 and N-1
    reach the boundary costates (node 0 is extrapolated, node N carries the
    O(h) offset of its half quadrature weight), which turns an O(h) error in
    P into an O(1) error in its difference quotient.
    """
    if linearization is not None:
        dp = linearization
    else:
        dp = discretize(problem, grid)
    alpha = problem.alpha
    order = 1.0 - alpha
    h = grid.h
    x = traj.x
    A, B, Q, R = dp.A, dp.B, dp.Q, dp.R
    BRB = np.array([B[k] @ np.linalg.solve(R[k], B[k].T) for k in range(grid.size)])

    Px = np.einsum("ijk,jk->ik", P, x)
    term1 = -np.einsum("kij,jk->ik", Q, x) - np.einsum("kji,jk->ik", A, Px)
    term2 = np.einsum("kij,jk->ik", A, x) - np.einsum("kij,jk->ik", BRB, Px)
    res10 = (
        np.einsum("ijk,jk->ik", _central_diff(P, h), x)
        - _frac_or_identity(term1, order, grid)
        + np.einsum("ijk,jk->ik", P, _frac_or_identity(term2, order, grid))
    )

    if problem.is_linear and linearization is None:
        v = co_reference(problem, grid, analytic=False)
    else:
        r = sample_reference(problem.reference, grid)
        v = np.einsum("kij,jk->ik", A, r) - fracops.caputo_apply(r, alpha, grid) + dp.d.T
    Atz = np.einsum("kji,jk->ik", A, z)
    inner = np.einsum("kij,jk->ik", BRB, z) - v
    res11 = (
        _central_diff(z, h)
        + _frac_or_identity(Atz, order, grid)
        - np.einsum("ijk,jk->ik", P, _frac_or_identity(inner, order, grid))
    )
    N = grid.n_steps
    if N < 4:
        return float("nan"), float("nan")
    return (
        float(np.max(np.abs(res10[:, 2 : N - 1]))),
        float(np.max(np.abs(res11[:, 2 : N - 1]))),
    )


def synthesize(problem: TrackingProblem, grid: Grid, **solve_kwargs):
    """Full gain synthesis.

    Returns ``(GainSchedule, SolveReport)``; the report belongs to the
    tracking solve and carries the Riccati/offset residuals.
    """
    if problem.is_linear:
        dp = discretize(problem, grid)
        core = LQCore(dp)
        traj, report = solve_linear(problem, grid, core=core)
        lin = None
    else:
        traj, report = solve_nonlinear(problem, grid, **solve_kwargs)
        lin = report.linearization
        core = None
        dp = lin
    ext = riccati_from_ensemble(problem, grid, linearization=lin if lin is not None else dp, core=core)
    K = kalman_gain(ext.P_raw, problem, grid, linearization=dp)
    l, z = feedforward(problem, grid, K, traj, P=ext.P_raw)
    report.trajectory = traj
    report.res_eq10, report.res_eq11 = riccati_residuals(ext.P_raw, z, traj, problem, grid, linearization=lin)
    terminal = float(np.max(np.abs(ext.P_raw[:, :, -1] - problem.weights.T)))
    gains = GainSchedule(
        P=ext.P,
        K=K,
        z=z,
        l=l,
        grid=grid,
        alpha=problem.alpha,
        asymmetry=ext.asymmetry,
        max_condition=ext.max_condition,
        terminal_mismatch=terminal,
        P_raw=ext.P_raw,
    )
    return gains, report
