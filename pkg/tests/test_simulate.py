import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import synthesized
from fraclqt import fracops, model, transcribe
from fraclqt.errors import ConvergenceError, InputError
from fraclqt.fracops import Grid
from fraclqt.model import LinearPlant, NonlinearPlant, evaluate_cost, sample_reference
from fraclqt.simulate import (
    SimulationResult,
    simulate_closed_loop,
    simulate_open_loop,
    tracking_metrics,
)
from fraclqt.synthesis import GainSchedule


def oscillator():
    return LinearPlant([[0.0, 1.0], [-2.0, -0.3]], [[0.0], [1.0]])


def zero_schedule(plant, grid, alpha):
    q, r = plant.state_dim, plant.control_dim
    n = grid.size
    return GainSchedule(
        np.zeros((q, q, n)), np.zeros((r, q, n)), np.zeros((q, n)), np.zeros((r, n)), grid, alpha
    )


def closed_loop(name, x0=None):
    p, g, gains, report = synthesized(name)
    ref = sample_reference(p.reference, g)
    x0 = p.x0 if x0 is None else x0
    return p, g, report, simulate_closed_loop(p.plant, gains, x0, g, reference=ref)


# -- open loop -----------------------------------------------------------------------


def test_no_dynamics_no_control_keeps_state():
    plant = LinearPlant(np.zeros((2, 2)), [[1.0], [2.0]])
    g = Grid(1.0, 50)
    res = simulate_open_loop(plant, np.zeros((1, 51)), [0.3, -1.2], 0.8, g)
    np.testing.assert_array_equal(res.x, np.array([[0.3], [-1.2]]) * np.ones(51))


def test_initial_state_is_exact():
    g = Grid(1.0, 20)
    x0 = [0.1 + 1e-17, np.pi]
    res = simulate_open_loop(oscillator(), np.ones((1, 21)), x0, 0.9, g)
    assert res.x[:, 0].tolist() == np.asarray(x0).tolist()


@pytest.mark.parametrize("alpha", [0.8, 0.95])
def test_mittag_leffler_free_response(alpha):
    errs = []
    for n in (250, 500, 1000):
        g = Grid(1.0, n)
        res = simulate_open_loop(LinearPlant([[-2.0]], [[1.0]]), np.zeros((1, n + 1)), [1.0], alpha, g)
        exact = np.array([fracops.mittag_leffler(alpha, -2.0 * t**alpha) for t in g.nodes])
        errs.append(np.max(np.abs(res.x[0] - exact) / np.abs(exact)))
    assert errs[1] <= 5e-2
    assert errs[0] > errs[1] > errs[2]


def integer_order_gap(n):
    g = Grid(2.0, n)
    res = simulate_open_loop(oscillator(), np.sin(g.nodes)[None], [1.0, 0.0], 1.0, g)
    A, b = oscillator().A.at(0.0), np.array([0.0, 1.0])
    ref = solve_ivp(lambda t, x: A @ x + b * np.sin(t), (0.0, 2.0), [1.0, 0.0], t_eval=g.nodes,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    return np.max(np.abs(res.x - ref.y))


def test_integer_order_matches_adaptive_integrator_first_order():
    e500, e1000 = integer_order_gap(500), integer_order_gap(1000)
    assert e1000 <= 5e-3
    assert 1.8 < e500 / e1000 < 2.2


@pytest.mark.xfail(strict=True, reason="backward-Euler stepping at alpha = 1 is first order: 2.7e-3 at N=1000")
def test_integer_order_matches_adaptive_integrator_1e_4():
    assert integer_order_gap(1000) <= 1e-4


def test_open_loop_shape_check():
    with pytest.raises(InputError):
        simulate_open_loop(oscillator(), np.zeros((1, 5)), [1.0, 0.0], 0.9, Grid(1.0, 10))
    with pytest.raises(InputError):
        simulate_open_loop(oscillator(), np.zeros((1, 11)), [1.0], 0.9, Grid(1.0, 10))


def test_replaying_optimal_control_reproduces_state(mass_spring, vdp_q1):
    for p, g, traj, _ in (mass_spring, vdp_q1):
        res = simulate_open_loop(p.plant, traj.u, p.x0, p.alpha, g)
        assert np.max(np.abs(res.x - traj.x)) <= 1e-6


def test_nonlinear_step_failure_names_node():
    # one backward-Euler step of D x = x^2 + 1 from 0 with h = 1: x - x^2 - 1 = 0 has no real root
    plant = NonlinearPlant(1, 1, lambda x, u, t: x**2 + 1.0, lambda x, u, t: np.array([[2.0 * x[0]]]),
                           lambda x, u, t: np.zeros((1, 1)))
    with pytest.raises(ConvergenceError, match="node 1"):
        simulate_open_loop(plant, np.zeros((1, 2)), [0.0], 1.0, Grid(1.0, 1))


# -- closed loop -----------------------------------------------------------------------


@pytest.mark.parametrize("plant_name", ["linear", "vdp"])
def test_zero_gains_identical_to_zero_control(plant_name):
    plant = oscillator() if plant_name == "linear" else model.van_der_pol_plant()
    g = Grid(3.0, 200)
    ol = simulate_open_loop(plant, np.zeros((1, 201)), [1.0, 0.5], 0.9, g)
    cl = simulate_closed_loop(plant, zero_schedule(plant, g, 0.9), [1.0, 0.5], g)
    assert np.array_equal(ol.x, cl.x) and np.array_equal(ol.u, cl.u)


@pytest.mark.parametrize("name", ["mass_spring", "vdp_q1", "vdp_q10"])
def test_closed_loop_reproduces_open_loop_optimum(name):
    p, g, report, cl = closed_loop(name)
    traj = report.trajectory
    assert np.max(np.abs(cl.x - traj.x)) <= 1e-3
    assert abs(evaluate_cost(cl.x, cl.u, p, g) - traj.cost) <= 1e-3 * traj.cost


def test_closed_loop_records_applied_control():
    p, g, report, cl = closed_loop("mass_spring")
    _, _, gains, _ = synthesized("mass_spring")
    u = -np.einsum("ijk,jk->ik", gains.K, cl.x) + gains.l
    np.testing.assert_allclose(cl.u, u, rtol=0, atol=1e-12)


def test_closed_loop_grid_mismatch():
    _, _, gains, _ = synthesized("mass_spring")
    with pytest.raises(InputError):
        simulate_closed_loop(oscillator(), gains, [0.0, 0.0], Grid(10.0, 100))


def test_heavier_tracking_weight_tracks_better():
    _, g, _, c1 = closed_loop("vdp_q1")
    p, _, _, c10 = closed_loop("vdp_q10")
    ref = sample_reference(p.reference, g)
    e1 = tracking_metrics(c1, ref, g, components=[0]).ise
    e10 = tracking_metrics(c10, ref, g, components=[0]).ise
    assert e10 < e1


def test_deterministic():
    a = closed_loop("vdp_q1", x0=np.array([1.1, 0.0]))[3]
    b = closed_loop("vdp_q1", x0=np.array([1.1, 0.0]))[3]
    assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)


def cost_increase(name, dx0):
    p, g, gains, report = synthesized(name)
    traj = report.trajectory
    ref = sample_reference(p.reference, g)
    pp = p.replace(x0=p.x0 + dx0)
    cl = simulate_closed_loop(p.plant, gains, pp.x0, g, reference=ref)
    ol = simulate_open_loop(p.plant, traj.u, pp.x0, p.alpha, g, reference=ref)
    return evaluate_cost(cl.x, cl.u, pp, g) - traj.cost, evaluate_cost(ol.x, ol.u, pp, g) - traj.cost


def one_percent(p):
    # mass_spring starts at rest; perturb by 1% of the unit scale there
    return 0.01 * (p.x0 if np.any(p.x0) else np.ones_like(p.x0))


@pytest.mark.parametrize("name", ["mass_spring", "vdp_q1"])
def test_feedback_no_worse_than_stale_control(name):
    p = model.builtin_problem(name)
    cl, ol = cost_increase(name, one_percent(p))
    assert cl <= ol


def test_feedback_no_worse_than_stale_control_small_vdp_q10_perturbation():
    p = model.builtin_problem("vdp_q10")
    cl, ol = cost_increase("vdp_q10", 0.1 * one_percent(p))
    assert cl <= ol


@pytest.mark.xfail(strict=True, reason="vdp_q10 gains come from a linearization with large K spikes; local only")
def test_feedback_no_worse_than_stale_control_vdp_q10():
    p = model.builtin_problem("vdp_q10")
    cl, ol = cost_increase("vdp_q10", one_percent(p))
    assert cl <= ol


# -- metrics -------------------------------------------------------------------------------


def test_metrics_zero_error():
    g = Grid(1.0, 10)
    x = np.random.default_rng(0).standard_normal((2, 11))
    m = tracking_metrics(SimulationResult(x, np.zeros((1, 11))), x, g)
    assert m.ise == 0.0 and m.max_err == 0.0 and m.control_energy == 0.0


def test_metrics_constant_unit_error():
    g = Grid(2.0, 7)
    x = np.vstack([np.full(8, 0.6), np.full(8, 0.8)])
    m = tracking_metrics(SimulationResult(x, np.ones((1, 8))), np.zeros((2, 8)), g)
    assert m.ise == pytest.approx(2.0, rel=1e-14)
    assert m.max_err == pytest.approx(0.8)
    assert m.control_energy == pytest.approx(2.0, rel=1e-14)


def test_metrics_shape_mismatch():
    with pytest.raises(InputError):
        tracking_metrics(SimulationResult(np.zeros((2, 5)), np.zeros((1, 5))), np.zeros((2, 4)), Grid(1.0, 4))


def test_frozen_closed_loop_ise():
    for name, value in (("vdp_q1", 0.662244186251009), ("mass_spring", 4.562568311846613)):
        assert closed_loop(name)[3].metrics.ise == pytest.approx(value, rel=1e-9)


def test_solver_and_simulator_share_operator():
    # same GL operator: one implicit step of D x = a x from x0 matches the transcription row
    p = transcribe.discretize(
        model.TrackingProblem(LinearPlant([[-1.0]], [[0.0]]), model.Weights([[1.0]], [[1.0]], [[0.0]]),
                              model.ZeroReference(1), [1.0], 0.7, 1.0),
        Grid(1.0, 30),
    )
    res = simulate_open_loop(LinearPlant([[-1.0]], [[0.0]]), np.zeros((1, 31)), [1.0], 0.7, Grid(1.0, 30))
    row = p.operator.entries @ res.x[0] + res.x[0]
    assert np.max(np.abs(row[1:])) <= 1e-12
