import numpy as np
import pytest

from peng_cde.errors import DomainError, InvalidParameterError, ShapeError
from peng_cde.pathinterp import MonotoneCubicWarp, WarpedPath, augment_time, fit


def test_two_samples_give_a_linear_path():
    path = fit([0.0, 2.0], [np.array([1.0]), np.array([5.0])])
    for t in np.linspace(0.0, 2.0, 7):
        assert path.eval(t).data[0] == pytest.approx(1.0 + 2.0 * t, abs=1e-12)
        assert path.deriv(t).data[0] == pytest.approx(2.0, abs=1e-12)


def test_identity_samples_are_reproduced():
    times = np.array([0.0, 0.3, 0.35, 1.1, 2.0])
    path = fit(times, [np.array([t]) for t in times])
    for t in np.linspace(0.0, 2.0, 21):
        assert path.value(t)[0] == pytest.approx(t, abs=1e-12)
        assert path.derivative(t)[0] == pytest.approx(1.0, abs=1e-12)


def test_cubic_interpolation_error():
    times = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    path = fit(times, [np.array([t**3]) for t in times])
    grid = np.linspace(0.25, 0.75, 51)
    error = max(abs(path.value(t)[0] - t**3) for t in grid)
    assert error < 0.25**4 * 10


def test_knots_are_exact_for_matrix_channels():
    rng = np.random.default_rng(0)
    times = np.sort(rng.uniform(0, 3, size=8))
    samples = [rng.normal(size=(3, 3)) for _ in times]
    path = fit(times, samples)
    assert path.channel_shape == (3, 3)
    for t, sample in zip(times, samples):
        np.testing.assert_allclose(path.eval(t).data, sample, atol=1e-12, rtol=0)


def test_constant_samples_have_zero_derivative():
    path = fit([0.0, 1.0, 2.5], [np.ones((2, 2))] * 3)
    assert np.all(path.deriv(1.7).data == 0.0)


def test_second_derivative_is_continuous():
    rng = np.random.default_rng(1)
    times = np.sort(rng.uniform(0, 1, size=7))
    path = fit(times, [rng.normal(size=4) for _ in times])
    for t in times[1:-1]:
        left = path.second_derivative(t, side="left")
        right = path.second_derivative(t, side="right")
        scale = np.max(np.abs(right)) + 1e-12
        assert np.max(np.abs(left - right)) / scale < 1e-9
    assert np.allclose(path.second_derivative(times[0]), 0.0)
    assert np.allclose(path.second_derivative(times[-1], side="left"), 0.0)


def test_fit_is_permutation_natural():
    rng = np.random.default_rng(2)
    times = np.sort(rng.uniform(0, 1, size=6))
    samples = [rng.normal(size=(4, 4)) for _ in times]
    p = rng.permutation(4)
    path = fit(times, samples)
    moved = fit(times, [s[np.ix_(p, p)] for s in samples])
    for t in np.linspace(times[0], times[-1], 9):
        assert np.array_equal(moved.value(t), path.value(t)[np.ix_(p, p)])


def test_reindexed_knots_reproduce_samples():
    times = np.array([0.0, 0.2, 0.7, 1.0])
    samples = [np.array([v]) for v in (1.0, -1.0, 3.0, 0.5)]
    warp = MonotoneCubicWarp(0.0, 1.0, 0.8)
    warped = fit([warp(t) for t in times], samples)
    for t, sample in zip(times, samples):
        assert warped.value(warp(t)) == pytest.approx(sample, abs=1e-12)


def test_eval_outside_domain_raises():
    path = fit([0.0, 1.0], [np.zeros(1), np.ones(1)])
    with pytest.raises(DomainError):
        path.eval(1.5)
    with pytest.raises(DomainError):
        path.deriv(-0.1)


@pytest.mark.parametrize(
    "times, samples, error",
    [
        ([0.0], [np.zeros(2)], InvalidParameterError),
        ([0.0, 0.0], [np.zeros(2), np.zeros(2)], InvalidParameterError),
        ([0.0, 1.0], [np.zeros(2), np.zeros(3)], ShapeError),
    ],
)
def test_fit_rejects_bad_input(times, samples, error):
    with pytest.raises(error):
        fit(times, samples)


def test_snapshot_holds_the_last_knot():
    path = fit([0.0, 1.0, 2.0], [np.full(1, v) for v in (0.0, 10.0, 20.0)])
    assert path.snapshot(0.99).data[0] == 0.0
    assert path.snapshot(1.0).data[0] == 10.0
    assert path.snapshot(2.0).data[0] == 20.0


def test_augment_time_adjacency():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = augment_time([a, a], [0.5, 2.0])
    assert out[1].shape == (2, 2, 2)
    assert np.all(out[1][..., 0] == 2.0)
    assert np.array_equal(out[0][..., 1], a)


def test_augment_time_features_grow_last_axis():
    x = np.ones((5, 3))
    out = augment_time([x], [1.5], new_axis=False)
    assert out[0].shape == (5, 4)
    assert np.all(out[0][:, 0] == 1.5)


def test_time_channel_derivative_is_one():
    rng = np.random.default_rng(3)
    times = np.sort(rng.uniform(0, 4, size=10))
    path = fit(times, augment_time([rng.normal(size=(3, 3)) for _ in times], times))
    for t in np.linspace(times[0], times[-1], 31):
        assert np.max(np.abs(path.derivative(t)[..., 0] - 1.0)) < 1e-10


def test_monotone_warp():
    warp = MonotoneCubicWarp(1.0, 3.0, 0.5)
    assert warp(1.0) == 1.0 and warp(3.0) == 3.0
    grid = np.linspace(1.0, 3.0, 101)
    values = [warp(s) for s in grid]
    assert np.all(np.diff(values) > 0)
    h = 1e-6
    for s in (1.3, 2.0, 2.7):
        numeric = (warp(s + h) - warp(s - h)) / (2 * h)
        assert warp.deriv(s) == pytest.approx(numeric, rel=1e-7)
    with pytest.raises(InvalidParameterError):
        MonotoneCubicWarp(0.0, 1.0, 2.5)


def test_warped_path_chain_rule():
    times = np.linspace(0.0, 1.0, 6)
    path = fit(times, [np.array([np.sin(3 * t)]) for t in times])
    warp = MonotoneCubicWarp(0.0, 1.0, -0.5)
    warped = WarpedPath(path, warp)
    h = 1e-6
    for s in (0.2, 0.5, 0.9):
        numeric = (warped.eval(s + h).data - warped.eval(s - h).data) / (2 * h)
        np.testing.assert_allclose(warped.deriv(s).data, numeric, rtol=1e-6)
