import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasdi.circuits import reference_circuit
from rasdi.dae import (CombinedSystem, LinearDae, Trajectory, backward_euler_step, check_consistent,
                       combine, consistent_y0, monolithic_solve, step_residuals, time_grid)
from rasdi.errors import DimensionMismatch, InconsistentInitialState, SingularD, SingularStepMatrix

from helpers import scalar_dae


def test_combine_scalar_blocks():
    sys = combine(scalar_dae(2, 3, 4, 5))
    np.testing.assert_array_equal(sys.big_a, [[2, 3], [4, 5]])
    np.testing.assert_array_equal(sys.diff_mask, [True, False])


def test_combine_decoupled_is_block_diagonal():
    dae = LinearDae(np.diag([1.0, 2.0]), np.zeros((2, 1)), np.zeros((1, 2)), [[3.0]],
                    lambda t: ([0, 0], [6.0]), [1.0, 1.0])
    sys = combine(dae)
    assert np.all(sys.big_a[:2, 2:] == 0) and np.all(sys.big_a[2:, :2] == 0)
    np.testing.assert_allclose(sys.z0, [1, 1, 2])


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        LinearDae([[1.0]], [[1.0, 2.0]], [[1.0]], [[1.0]], lambda t: ([0], [0]), [0.0])
    with pytest.raises(DimensionMismatch):
        LinearDae([[1.0]], [[1.0]], [[1.0]], [[1.0, 0.0]], lambda t: ([0], [0]), [0.0])
    with pytest.raises(DimensionMismatch):
        LinearDae([[1.0]], [[1.0]], [[1.0]], [[1.0]], lambda t: ([0], [0]), [0.0], names=("x",))


def test_singular_d_rejected():
    with pytest.raises(SingularD):
        scalar_dae(1, 1, 1, 0)
    # accepted when explicitly allowed
    scalar_dae_ok = LinearDae([[1.0]], [[1.0]], [[1.0]], [[0.0]], lambda t: ([0], [0]), [0.0], check_d=False)
    assert scalar_dae_ok.n == 2


def test_consistent_y0_examples():
    dae = LinearDae([[0.0]], np.zeros((1, 2)), [[0.0], [0.0]], np.eye(2), lambda t: ([0], [0, 0]), [1.0])
    np.testing.assert_array_equal(consistent_y0(dae), [0, 0])
    dae = LinearDae([[0.0]], np.zeros((1, 2)), [[1.0], [0.0]], np.eye(2), lambda t: ([0], [5, 1]), [2.0])
    np.testing.assert_allclose(consistent_y0(dae), [3, 1])


def test_consistent_y0_minimum_norm_for_singular_d():
    # y1 + y2 = 4 has many solutions; the minimum-norm one is (2, 2)
    dae = LinearDae([[0.0]], np.zeros((1, 2)), [[0.0], [0.0]], [[1.0, 1.0], [0.0, 0.0]],
                    lambda t: ([0], [4, 0]), [0.0], check_d=False)
    np.testing.assert_allclose(consistent_y0(dae), [2, 2])
    bad = LinearDae([[0.0]], np.zeros((1, 2)), [[0.0], [0.0]], [[1.0, 1.0], [0.0, 0.0]],
                    lambda t: ([0], [4, 1]), [0.0], check_d=False)
    with pytest.raises(InconsistentInitialState):
        consistent_y0(bad)


def test_ex1_initial_algebraic_state_against_hand_solve():
    circ, _ = reference_circuit("ex1")
    dae = circ.dae
    _, b2 = dae.forcing(0.0)
    y_hand = np.linalg.solve(dae.d_mat, b2 - dae.c_mat @ dae.x0) if np.linalg.matrix_rank(dae.d_mat) == dae.n2 \
        else np.linalg.lstsq(dae.d_mat, b2 - dae.c_mat @ dae.x0, rcond=None)[0]
    sys = combine(dae)
    np.testing.assert_allclose(sys.z0[dae.n1:], y_hand, atol=1e-12)
    traj = monolithic_solve(sys, 1e-3, 1e-3)
    np.testing.assert_allclose(traj.states[0, dae.n1:], y_hand, atol=1e-12)


def test_step_matrix_rows():
    sys = combine(scalar_dae(2, 3, 4, 5))
    np.testing.assert_allclose(sys.step_matrix(0.1), [[1.2, 0.3], [4, 5]])
    np.testing.assert_allclose(sys.step_rhs(0.1, np.array([1.0, 9.0]), 0.0), [1.0, 0.0])


def test_scalar_backward_euler():
    dae = LinearDae([[1.0]], np.zeros((1, 0)), np.zeros((0, 1)), np.zeros((0, 0)),
                    lambda t: ([0.0], []), [1.0])
    traj = monolithic_solve(combine(dae), 0.1, 0.3)
    np.testing.assert_allclose(traj.states[:, 0], [1, 1 / 1.1, 1 / 1.1 ** 2, 1 / 1.1 ** 3], rtol=1e-15)


@pytest.mark.parametrize("dt", [1e-3, 0.5])
def test_pure_algebraic(dt):
    d = np.array([[2.0, 1.0], [0.0, 4.0]])
    dae = LinearDae(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((2, 0)), d,
                    lambda t: ([], [np.sin(t), np.cos(t)]), np.zeros(0))
    traj = monolithic_solve(combine(dae), dt, 4 * dt)
    for t, z in zip(traj.times, traj.states):
        np.testing.assert_allclose(z, np.linalg.solve(d, [np.sin(t), np.cos(t)]), atol=1e-15)


def test_ex1_step_against_hand_solve():
    circ, _ = reference_circuit("ex1")
    sys = circ.system()
    dt = 1.2e-3
    z1 = backward_euler_step(sys, dt, sys.z0, dt)
    mat = np.eye(sys.n) * sys.diff_mask + np.where(sys.diff_mask[:, None], dt, 1.0) * sys.big_a
    b = np.asarray(sys.forcing(dt))
    rhs = np.where(sys.diff_mask, sys.z0 + dt * b, b)
    np.testing.assert_allclose(z1, np.linalg.solve(mat, rhs), rtol=1e-12, atol=1e-14)


def test_singular_step_matrix():
    sys = CombinedSystem(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([True, False]),
                         lambda t: np.zeros(2), np.zeros(2))
    with pytest.raises(SingularStepMatrix):
        monolithic_solve(sys, 0.1, 0.2)


def test_inconsistent_start_rejected():
    sys = combine(scalar_dae(1, 0, 0, 1, b2=1.0))
    with pytest.raises(InconsistentInitialState):
        check_consistent(sys, np.array([0.0, 0.0]), 0.0)
    with pytest.raises(InconsistentInitialState):
        monolithic_solve(sys, 0.1, 0.1, z0=[0.0, 0.0])


def test_time_grid_and_csv_round_trip(tmp_path):
    times = time_grid(0.1, 1.0)
    assert len(times) == 11
    np.testing.assert_allclose(np.diff(times), 0.1)
    with pytest.raises(ValueError):
        time_grid(0.0, 1.0)
    circ, _ = reference_circuit("ex1")
    traj = monolithic_solve(circ.system(), 1e-3, 5e-3)
    traj.to_csv(tmp_path / "t.csv")
    back = Trajectory.from_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.states, traj.states)
    assert tuple(back.names) == tuple(traj.names)
    np.testing.assert_array_equal(back.column("e3"), traj.column("e3"))


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5), d=st.floats(0.5, 5),
       x0=st.floats(-3, 3), dt=st.floats(1e-3, 0.2))
def test_residual_invariants_scalar(a, b, c, d, x0, dt):
    dae = LinearDae([[a]], [[b]], [[c]], [[d]], lambda t: ([np.cos(t)], [np.sin(t)]), [x0])
    sys = combine(dae)
    try:
        traj = monolithic_solve(sys, dt, 10 * dt)
    except SingularStepMatrix:
        return
    if not np.all(np.isfinite(traj.states)) or np.abs(traj.states).max() > 1e8:
        return
    be, alg = step_residuals(sys, traj)
    assert be.max() <= 1e-10 * max(1.0, np.linalg.cond(sys.step_matrix(dt)))
    assert alg.max() <= 1e-12
    np.testing.assert_allclose(np.diff(traj.times), dt)
