import dataclasses

import numpy as np
import pytest

from peng_cde.constants import SIR_LABELS, TASKS
from peng_cde.dynamics import (
    SystemSpec,
    gamma_times,
    initial_state,
    make_task_series,
    rhs,
    simulate,
    sir_label,
)
from peng_cde.errors import InvalidParameterError, NonFiniteError, ShapeError
from peng_cde.graphgen import build_series, gen_graph


def fixed_series(adjacency, num_times=12, t_end=1.0):
    series = build_series("grid", 4, t_end, num_times, 1, seed=0)
    series.adjacency = [np.asarray(adjacency, dtype=float)] * num_times
    return series


def complete(n):
    return np.ones((n, n)) - np.eye(n)


def test_heat_is_at_rest_on_a_complete_graph():
    x = np.full((5, 1), 3.0)
    np.testing.assert_allclose(rhs(SystemSpec("heat"), complete(5), x), 0.0, atol=1e-14)


def test_heat_ignores_isolated_nodes():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    out = rhs(SystemSpec("heat"), a, np.array([[1.0], [2.0], [7.0]]))
    assert out[2, 0] == 0.0
    # Heat flows from the warmer node to the colder one.
    assert out[0, 0] == pytest.approx(1.0)
    assert out[1, 0] == pytest.approx(-1.0)


def test_heat_on_a_path_graph():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = a[1, 2] = a[2, 1] = 1.0
    out = rhs(SystemSpec("heat"), a, np.array([[1.0], [2.0], [7.0]]))
    root2 = np.sqrt(2.0)
    np.testing.assert_allclose(
        out[:, 0], [root2 - 1.0, 8.0 - 2.0 * root2, root2 - 7.0], atol=1e-12
    )


def test_gene_isolated_node_decays():
    out = rhs(SystemSpec("gene"), np.zeros((2, 2)), np.array([[2.0], [0.0]]))
    assert out[0, 0] == -2.0
    assert out[1, 0] == 0.0


def test_sir_rates_sum_to_zero_per_node():
    rng = np.random.default_rng(0)
    x = rng.dirichlet([1.0, 1.0, 1.0], size=6)
    out = rhs(SystemSpec.sir("outbreak"), gen_graph("small-world", 6, seed=0), x)
    np.testing.assert_allclose(out.sum(axis=1), 0.0, atol=1e-15)


def test_wealth_warns_on_negative_capital():
    spec = SystemSpec("wealth", savings=(0.05, 0.05))
    with pytest.warns(RuntimeWarning, match="negative capital"):
        out = rhs(spec, complete(2), np.array([[-1.0], [1.0]]))
    assert np.all(np.isfinite(out))


def test_wealth_needs_savings_per_node():
    with pytest.raises(InvalidParameterError):
        rhs(SystemSpec("wealth", savings=(0.1,)), complete(2), np.ones((2, 1)))


def test_rhs_checks_state_shape():
    with pytest.raises(ShapeError):
        rhs(SystemSpec.sir("die-out"), complete(3), np.ones((3, 1)))


@pytest.mark.parametrize("kind", ["heat", "gene", "opinion", "sir"])
def test_rhs_commutes_with_relabelling(kind):
    rng = np.random.default_rng(1)
    spec = SystemSpec.sir("outbreak") if kind == "sir" else SystemSpec(kind)
    a = gen_graph("community", 12, seed=2)
    x = rng.uniform(0.0, 1.0, size=(12, spec.channels))
    p = rng.permutation(12)
    np.testing.assert_allclose(
        rhs(spec, a[np.ix_(p, p)], x[p]), rhs(spec, a, x)[p], atol=1e-12
    )


def test_heat_two_nodes_conserve_and_equalise():
    series = fixed_series(complete(2), num_times=12, t_end=2.0)
    states = simulate(SystemSpec("heat"), series, np.array([[3.0], [1.0]]))
    for t, x in zip(series.times, states):
        assert x.sum() == pytest.approx(4.0, abs=1e-12)
        gap = 2.0 * np.exp(-2.0 * (t - series.times[0]))
        assert x[0, 0] - x[1, 0] == pytest.approx(gap, abs=1e-9)


def test_sir_conserves_each_node_population():
    series = build_series("community", 20, 5.0, 30, 4, seed=3)
    spec = SystemSpec.sir("outbreak")
    x0 = initial_state(spec, 20, np.random.default_rng(0))
    for x in simulate(spec, series, x0):
        np.testing.assert_allclose(x.sum(axis=1), 1.0, atol=1e-8)
        assert np.all(x > -1e-12)


def test_opinion_stays_bounded():
    series = build_series("power-law", 30, 5.0, 20, 3, seed=1)
    spec = SystemSpec("opinion")
    x0 = initial_state(spec, 30, np.random.default_rng(1))
    for x in simulate(spec, series, x0):
        assert np.all(np.abs(x) <= 1.0 + 1e-12)


def test_simulate_reports_blow_up():
    spec = SystemSpec("wealth", growth=50.0, savings=(0.0, 0.0))
    with pytest.raises(NonFiniteError, match="blew up"):
        simulate(spec, fixed_series(complete(2)), np.full((2, 1), 25.0))


def test_simulate_checks_initial_state():
    with pytest.raises(ShapeError):
        simulate(SystemSpec("heat"), fixed_series(complete(2)), np.ones((3, 1)))


def test_gamma_times():
    times = gamma_times(40, 0.5, 5.0, seed=4)
    assert len(times) == 40
    assert times[0] == 0.0 and times[-1] == 5.0
    assert np.all(np.diff(times) > 0)
    assert np.array_equal(times, gamma_times(40, 0.5, 5.0, seed=4))
    assert not np.array_equal(times, gamma_times(40, 0.5, 5.0, seed=5))


@pytest.mark.parametrize("args", [(1, 1.0, 1.0), (5, 0.0, 1.0), (5, 1.0, -1.0)])
def test_gamma_times_rejects_bad_arguments(args):
    with pytest.raises(InvalidParameterError):
        gamma_times(*args)


def test_sir_label():
    assert sir_label(SystemSpec.sir("outbreak")) == "outbreak"
    assert sir_label(SystemSpec.sir("die-out")) == "die-out"
    custom = SystemSpec("sir", beta=1.0, gamma=0.1)
    rising = [np.array([[0.9, 0.1, 0.0]]), np.array([[0.5, 0.4, 0.1]])]
    falling = [np.array([[0.9, 0.1, 0.0]]), np.array([[0.9, 0.05, 0.05]])]
    assert sir_label(custom, rising) == "outbreak"
    assert sir_label(custom, falling) == "die-out"
    with pytest.raises(InvalidParameterError):
        sir_label(custom)
    with pytest.raises(InvalidParameterError):
        sir_label(SystemSpec("heat"))


@pytest.mark.parametrize(
    "build",
    [
        lambda: SystemSpec("tides"),
        lambda: SystemSpec("gene", gene_f=float("nan")),
        lambda: SystemSpec("sir", beta=0.0),
        lambda: SystemSpec.sir("pandemic"),
    ],
)
def test_invalid_system_specs(build):
    with pytest.raises(InvalidParameterError):
        build()


def test_make_task_series_for_node_regression():
    series = make_task_series("gene", "grid", 9, 2.0, 12, 2, seed=7)
    assert series.feature_dim == 1
    assert len(series.features) == series.num_times
    assert series.meta["task"] == "gene"
    assert series.labels is None
    again = make_task_series("gene", "grid", 9, 2.0, 12, 2, seed=7)
    assert all(np.array_equal(a, b) for a, b in zip(series.features, again.features))


def test_make_task_series_for_sir():
    series = make_task_series(
        "sir", "community", 20, 5.0, 20, 2, seed=0, regime="die-out", gamma_shape=0.5
    )
    assert series.feature_dim == 3
    assert series.labels == [SIR_LABELS["die-out"]]
    assert series.meta["regime"] == "die-out"
    assert series.meta["gamma_shape"] == 0.5
    assert series.times[0] == 0.0 and series.times[-1] == 5.0


def ring(n):
    return np.roll(np.eye(n), 1, axis=1) + np.roll(np.eye(n), -1, axis=1)


def test_heat_uniform_state_is_a_fixed_point_on_a_ring():
    x = np.full((7, 1), 4.5)
    assert np.array_equal(rhs(SystemSpec("heat"), ring(7), x), np.zeros((7, 1)))
    series = fixed_series(ring(7), num_times=12, t_end=2.0)
    for state in simulate(SystemSpec("heat"), series, x):
        assert np.array_equal(state, x)


@pytest.mark.parametrize("kind", TASKS)
def test_simulate_commutes_with_relabelling(kind):
    rng = np.random.default_rng(11)
    n = 10
    spec = SystemSpec.sir("outbreak") if kind == "sir" else SystemSpec(kind)
    spec = spec.with_savings(n, rng)
    series = build_series("small-world", n, 1.0, 12, 2, seed=4)
    x0 = initial_state(spec, n, rng)
    p = rng.permutation(n)
    relabelled = dataclasses.replace(
        series, adjacency=[a[np.ix_(p, p)] for a in series.adjacency]
    )
    moved_spec = spec
    if kind == "wealth":
        moved_spec = dataclasses.replace(
            spec, savings=tuple(np.asarray(spec.savings)[p])
        )

    original = simulate(spec, series, x0)
    moved = simulate(moved_spec, relabelled, x0[p])
    for a, b in zip(moved, original):
        np.testing.assert_allclose(a, b[p], rtol=1e-10, atol=1e-10)


def test_gamma_gaps_become_regular_for_large_shapes():
    for seed in range(5):
        regular = np.diff(gamma_times(21, 100.0, 1.0, seed=seed))
        irregular = np.diff(gamma_times(21, 3.0, 1.0, seed=seed))
        assert regular.max() / regular.min() < 2.0
        assert irregular.var() > regular.var()
