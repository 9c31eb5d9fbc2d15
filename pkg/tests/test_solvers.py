import math

import numpy as np
import pytest

from peng_cde.errors import (
    InvalidParameterError,
    ShapeError,
    SnapError,
    StepUnderflowError,
)
from peng_cde.solvers import SolverConfig, refined_grid, rk4_solve, solve, tsit5_solve
from peng_cde.tensor import Tensor


def decay(t, z):
    return z * -1.0


def still(t, z):
    return z * 0.0


def test_tsit5_exponential_decay():
    path = tsit5_solve(
        decay, Tensor([1.0]), 0.0, 2.0, [0.0, 1.0, 2.0], rtol=1e-10, atol=1e-12
    )
    assert len(path.states) == 3
    assert path.states[0].item() == 1.0
    assert abs(path.states[1].item() - math.exp(-1.0)) < 1e-8
    assert abs(path.states[2].item() - math.exp(-2.0)) < 1e-8


def test_tsit5_dense_output_between_steps():
    times = list(np.linspace(0.0, 3.0, 31))
    path = tsit5_solve(decay, Tensor([2.0]), 0.0, 3.0, times, rtol=1e-6, atol=1e-9)
    errors = [abs(z.item() - 2.0 * math.exp(-t)) for t, z in zip(times, path.states)]
    assert max(errors) < 1e-5


def test_tsit5_zero_field_takes_one_step():
    z0 = Tensor(np.arange(6.0).reshape(3, 2))
    path = tsit5_solve(still, z0, 0.0, 4.0, [4.0], dt0=4.0)
    assert path.stats.accepted == 1
    assert path.stats.rejected == 0
    assert np.array_equal(path.states[0].data, z0.data)


def test_tsit5_error_does_not_grow_with_tighter_tolerances():
    def error(rtol):
        path = tsit5_solve(
            decay, Tensor([1.0]), 0.0, 5.0, [5.0], rtol=rtol, atol=rtol * 1e-3
        )
        return abs(path.states[0].item() - math.exp(-5.0))

    loose, tight = error(1e-3), error(1e-9)
    assert tight <= loose
    assert tight < 1e-7


def test_tsit5_step_underflow():
    with pytest.raises(StepUnderflowError) as e_info:
        tsit5_solve(decay, Tensor([1.0]), 0.0, 1.0, [1.0], dt0=1e-15)
    assert e_info.value.t == 0.0
    assert e_info.value.span == 1.0


def test_tsit5_rejects_bad_interval_and_save_times():
    with pytest.raises(InvalidParameterError):
        tsit5_solve(decay, Tensor([1.0]), 1.0, 1.0, [1.0])
    with pytest.raises(InvalidParameterError):
        tsit5_solve(decay, Tensor([1.0]), 0.0, 1.0, [0.5, 0.2])
    with pytest.raises(InvalidParameterError):
        tsit5_solve(decay, Tensor([1.0]), 0.0, 1.0, [1.5])


def test_rk4_constant_slope_is_exact():
    def slope(t, z):
        return Tensor(np.ones(z.shape))

    path = rk4_solve(slope, Tensor([0.5]), 0.0, 2.0, num_steps=3)
    assert path.save_times == [2.0]
    assert path.states[0].item() == pytest.approx(2.5, abs=1e-14)


def test_rk4_integrates_cubics_in_time_exactly():
    def field(t, z):
        return Tensor(np.full(z.shape, 3.0 * t**2))

    path = rk4_solve(field, Tensor([0.0]), 0.0, 1.0, num_steps=4, save_times=[0.5, 1.0])
    assert path.states[0].item() == pytest.approx(0.125, abs=1e-14)
    assert path.states[1].item() == pytest.approx(1.0, abs=1e-14)


def test_rk4_zero_field_and_determinism():
    rng = np.random.default_rng(0)
    z0 = Tensor(rng.normal(size=(4, 3)))
    path = rk4_solve(still, z0, 0.0, 1.0, num_steps=10, save_times=[0.0, 0.5, 1.0])
    assert all(np.array_equal(z.data, z0.data) for z in path.states)

    w = Tensor(rng.normal(size=(3, 3)))
    first = rk4_solve(lambda t, z: (z @ w).tanh(), z0, 0.0, 1.0, num_steps=16)
    second = rk4_solve(lambda t, z: (z @ w).tanh(), z0, 0.0, 1.0, num_steps=16)
    assert np.array_equal(first.states[0].data, second.states[0].data)
    assert first.stats.evaluations == 64


def test_rk4_save_time_off_the_grid():
    with pytest.raises(SnapError):
        rk4_solve(decay, Tensor([1.0]), 0.0, 1.0, num_steps=4, save_times=[0.3])


def test_rk4_explicit_grid():
    grid = [0.0, 0.1, 0.3, 1.0]
    path = rk4_solve(decay, Tensor([1.0]), 0.0, 1.0, grid=grid, save_times=[0.3])
    assert path.stats.accepted == 3
    with pytest.raises(InvalidParameterError):
        rk4_solve(decay, Tensor([1.0]), 0.0, 1.0, grid=[0.0, 0.5, 0.4, 1.0])
    with pytest.raises(InvalidParameterError):
        rk4_solve(decay, Tensor([1.0]), 1.0, 0.0)


def test_field_must_keep_the_state_shape():
    with pytest.raises(ShapeError):
        rk4_solve(lambda t, z: Tensor(np.ones(3)), Tensor([1.0]), 0.0, 1.0)


def test_refined_grid_passes_through_save_times():
    grid = refined_grid([0.0, 0.37, 1.0], 0.0, 1.0, 10)
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.any(np.isclose(grid, 0.37, atol=0, rtol=1e-15))
    assert np.all(np.diff(grid) > 0)


def test_solve_dispatches_on_method():
    times = [0.0, 0.37, 1.0]
    rk4 = solve(decay, Tensor([1.0]), times, SolverConfig(method="rk4", num_steps=64))
    tsit5 = solve(decay, Tensor([1.0]), times, SolverConfig(rtol=1e-9, atol=1e-12))
    for path in (rk4, tsit5):
        assert len(path.states) == 3
        assert path.states[1].item() == pytest.approx(math.exp(-0.37), abs=1e-7)


def test_solve_on_a_single_time_returns_the_initial_state():
    z0 = Tensor([3.0])
    path = solve(decay, z0, [2.0], SolverConfig())
    assert path.states == [z0]
    with pytest.raises(InvalidParameterError):
        solve(decay, z0, [], SolverConfig())


@pytest.mark.parametrize(
    "options",
    [
        {"method": "euler"},
        {"rtol": 0.0},
        {"atol": -1.0},
        {"num_steps": 0},
        {"dt0": 0.0},
    ],
)
def test_solver_config_validation(options):
    with pytest.raises(InvalidParameterError):
        SolverConfig(**options)


def test_solver_config_from_dict_ignores_unknown_keys():
    config = SolverConfig.from_dict({"method": "rk4", "num_steps": 8, "seed": 3})
    assert config == SolverConfig(method="rk4", num_steps=8)
    assert SolverConfig.from_dict(config.to_dict()) == config
