"""Problem definitions: plants, weights, reference signals and the builtins.

Sampled arrays returned from this module are component-major, e.g. a
reference sampled on a grid is ``(q, n_steps + 1)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fracops
from .errors import InputError
from .fracops import Grid, as_order, gamma

__all__ = [
    "Signal",
    "LinearPlant",
    "NonlinearPlant",
    "Weights",
    "ZeroReference",
    "PolynomialReference",
    "PolyCosineReference",
    "TableReference",
    "TrackingProblem",
    "sample_reference",
    "co_reference",
    "evaluate_cost",
    "builtin_problem",
    "build_mass_spring",
    "stiffness_matrix",
    "BUILTIN_NAMES",
]


@dataclass(frozen=True, eq=False)
class Signal:
    """A matrix- or vector-valued function of time.

    Either constant (``times is None``) or a sample table interpolated
    linearly between its knots.
    """

    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if self.times is not None:
            t = np.array(self.times, dtype=float)
            if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
                raise InputError("table times must be a strictly increasing 1-D array")
            if vals.shape[0] != t.size:
                raise InputError(
                    f"table has {t.size} times but {vals.shape[0]} samples"
                )
            object.__setattr__(self, "times", t)

    @classmethod
    def of(cls, value) -> "Signal":
        return value if isinstance(value, Signal) else cls(value)

    @property
    def is_constant(self) -> bool:
        return self.times is None

    @property
    def shape(self) -> tuple:
        return self.values.shape if self.is_constant else self.values.shape[1:]

    def covers(self, t0: float, t1: float) -> bool:
        if self.is_constant:
            return True
        tol = 1e-12 * max(1.0, abs(t1))
        return self.times[0] <= t0 + tol and self.times[-1] >= t1 - tol

    def at(self, t: float) -> np.ndarray:
        return self.sample(np.array([t]))[0]

    def sample(self, nodes) -> np.ndarray:
        """Values at ``nodes`` stacked along a new leading axis."""
        nodes = np.asarray(nodes, dtype=float)
        if self.is_constant:
            return np.broadcast_to(self.values, (nodes.size,) + self.values.shape).copy()
        if not self.covers(nodes[0], nodes[-1]):
            raise InputError(
                f"sample table covers [{self.times[0]}, {self.times[-1]}], "
                f"requested [{nodes[0]}, {nodes[-1]}]"
            )
        t = self.times
        idx = np.clip(np.searchsorted(t, nodes, side="right") - 1, 0, t.size - 2)
        theta = (nodes - t[idx]) / (t[idx + 1] - t[idx])
        theta = theta.reshape((-1,) + (1,) * (self.values.ndim - 1))
        out = (1.0 - theta) * self.values[idx] + theta * self.values[idx + 1]
        exact = np.isclose(nodes, t[idx], rtol=0.0, atol=0.0)
        out[exact] = self.values[idx[exact]]
        return out


@dataclass(frozen=True, eq=False)
class LinearPlant:
    """``D^alpha x = A(t) x + B(t) u + drift(t)``; drift defaults to zero."""

    A: Signal
    B: Signal
    drift: Signal | None = None

    def __post_init__(self):
        A, B = Signal.of(self.A), Signal.of(self.B)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if len(A.shape) != 2 or A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got shape {A.shape}")
        if len(B.shape) != 2 or B.shape[0] != A.shape[0]:
            raise InputError(f"B must be {A.shape[0]} x r, got shape {B.shape}")
        if self.drift is not None:
            d = Signal.of(self.drift)
            if d.shape != (A.shape[0],):
                raise InputError(f"drift must be a {A.shape[0]}-vector, got {d.shape}")
            object.__setattr__(self, "drift", d)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def sample(self, grid: Grid):
        """Per-node ``A_k``, ``B_k``, ``d_k`` arrays (node-major)."""
        nodes = grid.nodes
        A = self.A.sample(nodes)
        B = self.B.sample(nodes)
        if self.drift is None:
            d = np.zeros((grid.size, self.state_dim))
        else:
            d = self.drift.sample(nodes)
        return A, B, d


@dataclass(frozen=True, eq=False)
class NonlinearPlant:
    """``D^alpha x = f(x, u, t)`` with user-supplied Jacobians."""

    state_dim: int
    control_dim: int
    f: Callable
    jacobian_x: Callable
    jacobian_u: Callable
    name: str = ""

    def check_jacobians(self, n_points: int = 5, seed: int = 0, t_max: float = 1.0):
        """Compare the Jacobians with central differences at random points.

        Raises
        ------
        InputError
            If any entry disagrees by more than 1e-5 (relative to the
            Jacobian's magnitude, floored at 1).
        """
        rng = np.random.default_rng(seed)
        q, r = self.state_dim, self.control_dim
        for _ in range(n_points):
            x = rng.normal(size=q)
            u = rng.normal(size=r)
            t = rng.uniform(0.0, t_max)
            for which, jac, base, n in (
                ("x", self.jacobian_x, x, q),
                ("u", self.jacobian_u, u, r),
            ):
                J = np.asarray(jac(x, u, t), dtype=float)
                if J.shape != (q, n):
                    raise InputError(f"jacobian_{which} returned shape {J.shape}, want {(q, n)}")
                fd = np.empty((q, n))
                for i in range(n):
                    step = 1e-6 * max(1.0, abs(base[i]))
                    plus, minus = base.copy(), base.copy()
                    plus[i] += step
                    minus[i] -= step
                    if which == "x":
                        fp, fm = self.f(plus, u, t), self.f(minus, u, t)
                    else:
                        fp, fm = self.f(x, plus, t), self.f(x, minus, t)
                    fd[:, i] = (np.asarray(fp) - np.asarray(fm)) / (2.0 * step)
                scale = max(1.0, float(np.max(np.abs(J))))
                err = float(np.max(np.abs(J - fd))) / scale
                if err > 1e-5:
                    raise InputError(
                        f"jacobian_{which} disagrees with finite differences "
                        f"(relative error {err:.3g}) at x={x}, u={u}, t={t:.3g}"
                    )


def _check_psd(M, what, sym_tol=1e-12, eig_tol=1e-10):
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T)) > sym_tol * scale:
        raise InputError(f"{what} must be symmetric")
    if np.min(np.linalg.eigvalsh(M)) < -eig_tol * scale:
        raise InputError(f"{what} must be positive semi-definite")


@dataclass(frozen=True, eq=False)
class Weights:
    """Cost weights. ``cost_order < 1`` selects the RL-integral cost."""

    Q: Signal
    R: Signal
    T: np.ndarray
    cost_order: float = 1.0

    def __post_init__(self):
        Q, R = Signal.of(self.Q), Signal.of(self.R)
        T = np.array(self.T, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "cost_order", as_order(self.cost_order))
        if len(Q.shape) != 2 or Q.shape[0] != Q.shape[1]:
            raise InputError(f"Q must be square, got {Q.shape}")
        if len(R.shape) != 2 or R.shape[0] != R.shape[1]:
            raise InputError(f"R must be square, got {R.shape}")
        if T.shape != Q.shape:
            raise InputError(f"T must match Q's shape {Q.shape}, got {T.shape}")
        _check_psd(T, "T")
        for k, Qk in enumerate(Q.values if not Q.is_constant else [Q.values]):
            _check_psd(Qk, "Q" if Q.is_constant else f"Q sample {k}")
        for k, Rk in enumerate(R.values if not R.is_constant else [R.values]):
            if np.max(np.abs(Rk - Rk.T)) > 1e-12 * max(1.0, float(np.max(np.abs(Rk)))):
                raise InputError("R must be symmetric")
            try:
                np.linalg.cholesky(Rk)
            except np.linalg.LinAlgError:
                raise InputError("R must be positive definite (Cholesky failed)") from None

    def scaled(self, c: float) -> "Weights":
        """Weights with Q, R and T multiplied by ``c``."""
        def sc(s):
            return Signal(s.values * c, s.times)
        return Weights(sc(self.Q), sc(self.R), self.T * c, self.cost_order)

    def sample(self, grid: Grid):
        return self.Q.sample(grid.nodes), self.R.sample(grid.nodes)


# -- references -------------------------------------------------------------


@dataclass(frozen=True)
class ZeroReference:
    dim: int

    def evaluate(self, t):
        return np.zeros((self.dim, np.size(t)))


@dataclass(frozen=True)
class PolynomialReference:
    """Per-component polynomials, coefficients in ascending powers of t."""

    coefficients: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", tuple(tuple(float(c) for c in p) for p in self.coefficients)
        )

    @property
    def dim(self):
        return len(self.coefficients)

    def evaluate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array([np.polynomial.polynomial.polyval(t, p) for p in self.coefficients])


@dataclass(frozen=True)
class PolyCosineReference:
    """Component i is ``p_i(t) cos(omega_i t)``; ``components`` holds
    ``(coefficients, omega)`` pairs with ascending-power coefficients."""

    components: tuple

    def __post_init__(self):
        object.__setattr__(
            self,
            "components",
            tuple((tuple(float(c) for c in p), float(w)) for p, w in self.components),
        )

    @property
    def dim(self):
        return len(self.components)

    def evaluate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.array(
            [np.polynomial.polynomial.polyval(t, p) * np.cos(w * t) for p, w in self.components]
        )


@dataclass(frozen=True, eq=False)
class TableReference:
    times: np.ndarray
    values: np.ndarray  # (n_times, q)

    def __post_init__(self):
        sig = Signal(self.values, self.times)
        if len(sig.shape) != 1:
            raise InputError("reference table values must be (n_times, q)")
        object.__setattr__(self, "times", sig.times)
        object.__setattr__(self, "values", sig.values)

    @property
    def dim(self):
        return self.values.shape[1]

    def evaluate(self, t):
        return Signal(self.values, self.times).sample(np.atleast_1d(t)).T


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    plant: LinearPlant | NonlinearPlant
    weights: Weights
    reference: object
    x0: np.ndarray
    alpha: float
    t_final: float
    name: str = ""

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "alpha", as_order(self.alpha))
        object.__setattr__(self, "t_final", float(self.t_final))
        q, r = self.plant.state_dim, self.plant.control_dim
        if x0.size != q:
            raise InputError(f"x0 has length {x0.size}, plant state dimension is {q}")
        if self.reference.dim != q:
            raise InputError(f"reference dimension {self.reference.dim} != state dimension {q}")
        if self.weights.Q.shape != (q, q):
            raise InputError(f"Q shape {self.weights.Q.shape} != ({q}, {q})")
        if self.weights.R.shape != (r, r):
            raise InputError(f"R shape {self.weights.R.shape} != ({r}, {r})")
        if isinstance(self.reference, TableReference):
            if not Signal(self.reference.values, self.reference.times).covers(0.0, self.t_final):
                raise InputError("reference table does not cover [0, t_final]")
        if isinstance(self.plant, LinearPlant):
            sigs = [self.plant.A, self.plant.B] + ([self.plant.drift] if self.plant.drift else [])
            if not all(s.covers(0.0, self.t_final) for s in sigs):
                raise InputError("plant sample tables do not cover [0, t_final]")

    @property
    def is_linear(self) -> bool:
        return isinstance(self.plant, LinearPlant)

    @property
    def state_dim(self) -> int:
        return self.plant.state_dim

    @property
    def control_dim(self) -> int:
        return self.plant.control_dim

    def replace(self, **changes) -> "TrackingProblem":
        return dataclasses.replace(self, **changes)

    def default_grid(self, n_steps: int = 500) -> Grid:
        return Grid(self.t_final, n_steps)


def sample_reference(ref, grid: Grid) -> np.ndarray:
    """Reference values on the grid, shape ``(q, n_steps + 1)``."""
    return ref.evaluate(grid.nodes)


def _poly_caputo(coefficients, alpha, t):
    # C D^alpha t^p = Gamma(p+1)/Gamma(p+1-alpha) t^(p-alpha) for p >= 1; constants vanish
    out = np.zeros_like(t)
    if alpha == 1.0:
        deriv = np.polynomial.polynomial.polyder(coefficients) if len(coefficients) > 1 else [0.0]
        return np.polynomial.polynomial.polyval(t, deriv)
    with np.errstate(divide="ignore"):
        for p, c in enumerate(coefficients):
            if p == 0 or c == 0.0:
                continue
            out += c * gamma(p + 1) / gamma(p + 1 - alpha) * t ** (p - alpha)
    return out


def co_reference(problem: TrackingProblem, grid: Grid, analytic: bool | None = None) -> np.ndarray:
    """Co-reference ``v = A r - D^alpha r`` (+ the plant drift, if any).

    With ``x_bar = x - r`` the plant becomes ``D^alpha x_bar = A x_bar + B u + v``.
    Polynomial references use the exact monomial formula unless
    ``analytic=False``; everything else goes through :func:`fracops.caputo_apply`.
    """
    if not problem.is_linear:
        raise InputError("co_reference is only defined for linear plants")
    r = sample_reference(problem.reference, grid)
    A, _, d = problem.plant.sample(grid)
    Ar = np.einsum("kij,jk->ik", A, r)
    if analytic is None:
        analytic = isinstance(problem.reference, PolynomialReference)
    if isinstance(problem.reference, ZeroReference):
        dr = np.zeros_like(r)
    elif analytic:
        if not isinstance(problem.reference, PolynomialReference):
            raise InputError("analytic co-reference needs a polynomial reference")
        dr = np.array(
            [_poly_caputo(p, problem.alpha, grid.nodes) for p in problem.reference.coefficients]
        )
        dr[:, 0] = 0.0
    else:
        dr = fracops.caputo_apply(r, problem.alpha, grid)
    return Ar - dr + d.T


def cost_weights(weights: Weights, grid: Grid) -> np.ndarray:
    """Quadrature weights of the running cost (trapezoid or RL product rule)."""
    return fracops.rl_weights(weights.cost_order, grid)


def evaluate_cost(x, u, problem: TrackingProblem, grid: Grid) -> float:
    """``J = 1/2 e_N' T e_N + 1/2 I[e' Q e + u' R u]`` with ``e = x - r``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    q, r = problem.state_dim, problem.control_dim
    if x.shape != (q, grid.size) or u.shape != (r, grid.size):
        raise InputError(
            f"expected x {(q, grid.size)} and u {(r, grid.size)}, got {x.shape} and {u.shape}"
        )
    e = x - sample_reference(problem.reference, grid)
    Q, R = problem.weights.sample(grid)
    running = np.einsum("ik,kij,jk->k", e, Q, e) + np.einsum("ik,kij,jk->k", u, R, u)
    c = cost_weights(problem.weights, grid)
    eN = e[:, -1]
    return float(0.5 * eN @ problem.weights.T @ eN + 0.5 * c @ running)


# -- builtins ---------------------------------------------------------------


def stiffness_matrix(stiffnesses) -> np.ndarray:
    """Tridiagonal chain stiffness: diagonal k_l + k_{l+1} ending in k_L."""
    k = np.asarray(stiffnesses, dtype=float)
    L = k.size
    K = np.zeros((L, L))
    for i in range(L):
        K[i, i] = k[i] + (k[i + 1] if i + 1 < L else 0.0)
        if i + 1 < L:
            K[i, i + 1] = K[i + 1, i] = -k[i + 1]
    return K


def build_mass_spring(L: int, masses, stiffnesses) -> LinearPlant:
    """Chain of L masses; state is positions then velocities, input on mass L."""
    masses = np.asarray(masses, dtype=float)
    stiffnesses = np.asarray(stiffnesses, dtype=float)
    if L < 2:
        raise InputError(f"mass-spring chain needs L >= 2, got {L}")
    if masses.shape != (L,) or stiffnesses.shape != (L,):
        raise InputError(f"need {L} masses and {L} stiffnesses")
    if np.any(masses <= 0) or np.any(stiffnesses <= 0):
        raise InputError("masses and stiffnesses must be positive")
    kappa = stiffness_matrix(stiffnesses)
    A = np.zeros((2 * L, 2 * L))
    A[:L, L:] = np.eye(L)
    A[L:, :L] = -kappa / masses[:, None]
    B = np.zeros((2 * L, 1))
    B[-1, 0] = 1.0 / masses[-1]
    return LinearPlant(A, B)


def _vdp_f(x, u, t):
    return np.array([x[1], -x[0] + (1.0 - x[0] ** 2) * x[1] + u[0]])


def _vdp_jac_x(x, u, t):
    return np.array([[0.0, 1.0], [-1.0 - 2.0 * x[0] * x[1], 1.0 - x[0] ** 2]])


def _vdp_jac_u(x, u, t):
    return np.array([[0.0], [1.0]])


def van_der_pol_plant() -> NonlinearPlant:
    return NonlinearPlant(2, 1, _vdp_f, _vdp_jac_x, _vdp_jac_u, name="van_der_pol")


EXAMPLE2_REFERENCE_CONSTANT = -1.0 / 3.0


def _vdp_problem(name, q11):
    plant = van_der_pol_plant()
    plant.check_jacobians()
    return TrackingProblem(
        plant=plant,
        weights=Weights(np.diag([q11, 1.0]), np.array([[1.0]]), np.zeros((2, 2))),
        reference=PolyCosineReference((((1.0, -0.4), 1.0), ((0.0,), 0.0))),
        x0=[1.0, 0.0],
        alpha=0.9,
        t_final=5.0,
        name=name,
    )


def _mass_spring_problem(reference_constant=EXAMPLE2_REFERENCE_CONSTANT):
    L = 5
    masses = np.full(L, 10.0)
    stiff = np.full(L, 1.0)
    plant = build_mass_spring(L, masses, stiff)
    kappa = stiffness_matrix(stiff)
    Q = np.zeros((2 * L, 2 * L))
    Q[:L, :L] = kappa
    Q[L:, L:] = np.diag(masses)
    coeffs = [(0.0,)] * (2 * L)
    coeffs[3] = (reference_constant, 163.0 / 450.0, -13.0 / 450.0)
    x0 = np.zeros(2 * L)
    x0[L - 1] = 1.0
    return TrackingProblem(
        plant=plant,
        weights=Weights(2.0 * Q, np.array([[2.0]]), np.zeros((2 * L, 2 * L))),
        reference=PolynomialReference(tuple(coeffs)),
        x0=x0,
        alpha=0.95,
        t_final=10.0,
        name="mass_spring",
    )


_BUILTINS = {
    "vdp_q1": (lambda **kw: _vdp_problem("vdp_q1", 1.0),
               "fractional Van der Pol oscillator tracking (1 - 0.4 t) cos t, q11 = 1, alpha = 0.9, t_f = 5"),
    "vdp_q10": (lambda **kw: _vdp_problem("vdp_q10", 10.0),
                "as vdp_q1 with q11 = 10 (tighter tracking of x1)"),
    "mass_spring": (lambda **kw: _mass_spring_problem(**kw),
                    "5-mass spring chain, input on the last mass, alpha = 0.95, t_f = 10"),
}
BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_description(name: str) -> str:
    return _BUILTINS[name][1]


def builtin_problem(name: str, example2_reference_constant: float | None = None) -> TrackingProblem:
    """A builtin example problem by name (see ``BUILTIN_NAMES``).

    ``example2_reference_constant`` replaces the default -1/3 constant term
    of the mass-spring reference (for example -4/3).
    """
    if name not in _BUILTINS:
        raise InputError(f"unknown builtin problem {name!r}; valid names: {', '.join(BUILTIN_NAMES)}")
    if example2_reference_constant is not None:
        if name != "mass_spring":
            raise InputError("example2_reference_constant only applies to 'mass_spring'")
        return _BUILTINS[name][0](reference_constant=float(example2_reference_constant))
    return _BUILTINS[name][0]()
