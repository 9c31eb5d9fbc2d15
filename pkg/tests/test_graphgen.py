import json

import numpy as np
import pytest

from peng_cde.errors import DatasetFormatError, InvalidParameterError
from peng_cde.graphgen import (
    build_series,
    gen_graph,
    load_series,
    make_split,
    perturb,
    perturb_with_draws,
    save_series,
    series_from_dict,
    series_to_dict,
    symmetric_draws,
)


def assert_simple_graph(a):
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert set(np.unique(a)) <= {0.0, 1.0}


@pytest.mark.parametrize("kind", ["grid", "small-world", "power-law", "community"])
def test_gen_graph_is_simple(kind):
    assert_simple_graph(gen_graph(kind, 36, seed=3))


def test_grid_2x2_is_a_four_cycle():
    a = gen_graph("grid", 4, seed=0)
    assert np.array_equal(a.sum(axis=1), [2, 2, 2, 2])
    assert np.trace(np.linalg.matrix_power(a, 4)) == 32  # closed 4-walks of C4


def test_small_world_without_rewiring_is_a_ring_lattice():
    a = gen_graph("small-world", 20, seed=1, k=4, p=0.0)
    assert np.all(a.sum(axis=1) == 4)


def test_power_law_has_hubs():
    hits = 0
    for seed in range(20):
        degree = gen_graph("power-law", 400, seed=seed, m=2).sum(axis=1)
        hits += degree.max() > 3 * degree.mean()
    assert hits >= 19


@pytest.mark.parametrize(
    "kind, n, params",
    [
        ("grid", 7, {"rows": 2}),
        ("small-world", 10, {"k": 3}),
        ("power-law", 5, {"m": 0}),
        ("community", 10, {"p_in": 0.01, "p_out": 0.2}),
        ("hypercube", 8, {}),
        ("grid", 1, {}),
    ],
)
def test_gen_graph_invalid_parameters(kind, n, params):
    with pytest.raises(InvalidParameterError):
        gen_graph(kind, n, seed=0, **params)


def test_perturb_flip_count_is_binomial():
    n, rate = 60, 0.05
    a = gen_graph("community", n, seed=0)
    pairs = n * (n - 1) // 2
    flips = [
        int(np.triu(perturb(a, seed, rate) != a, 1).sum()) for seed in range(200)
    ]
    mean, sigma = pairs * rate, np.sqrt(pairs * rate * (1 - rate))
    assert abs(np.mean(flips) - mean) < 3 * sigma / np.sqrt(len(flips))
    assert_simple_graph(perturb(a, 0, rate))


def test_perturb_without_flips_returns_the_same_graph():
    a = gen_graph("grid", 9, seed=0)
    draws = np.ones((9, 9))
    assert np.array_equal(perturb_with_draws(a, draws, 0.5), a)


def test_perturb_commutes_with_relabelling():
    rng = np.random.default_rng(7)
    n = 12
    a = gen_graph("small-world", n, seed=2)
    draws = symmetric_draws(n, rng)
    p = rng.permutation(n)
    relabelled = perturb_with_draws(a[np.ix_(p, p)], draws[np.ix_(p, p)], 0.2)
    assert np.array_equal(relabelled, perturb_with_draws(a, draws, 0.2)[np.ix_(p, p)])


def test_perturb_rejects_bad_rate():
    with pytest.raises(InvalidParameterError):
        perturb(np.zeros((3, 3)), 0, 1.0)


@pytest.mark.parametrize(
    "num_times, sizes", [(120, (80, 20, 20)), (60, (40, 10, 10)), (12, (8, 2, 2))]
)
def test_make_split_ratios(num_times, sizes):
    split = make_split(num_times, np.random.default_rng(0))
    assert (len(split.train), len(split.interp_val), len(split.extrap_val)) == sizes
    assert split.extrap_val == list(range(num_times - sizes[2], num_times))
    every = sorted(split.train + split.interp_val + split.extrap_val)
    assert every == list(range(num_times))


def test_build_series_invariants():
    series = build_series("community", 30, 5.0, 60, 6, flip_rate=0.05, seed=4)
    series.validate()
    assert series.num_times == 60
    assert np.all(np.diff(series.times) > 0)
    assert 0.0 <= series.times[0] and series.times[-1] <= 5.0
    assert len(series.change_times) == 6
    assert series.times[0] not in series.change_times
    for k in range(1, series.num_times):
        if not np.array_equal(series.adjacency[k], series.adjacency[k - 1]):
            assert series.times[k] in series.change_times


def test_build_series_is_reproducible():
    one = build_series("power-law", 20, 1.0, 12, 3, seed=9)
    two = build_series("power-law", 20, 1.0, 12, 3, seed=9)
    assert np.array_equal(one.times, two.times)
    assert all(np.array_equal(a, b) for a, b in zip(one.adjacency, two.adjacency))
    assert one.split == two.split


def test_build_series_degenerate_counts():
    with pytest.raises(InvalidParameterError):
        build_series("grid", 9, 1.0, 12, 12)


def test_permuted_relabels_every_snapshot():
    series = build_series("grid", 9, 1.0, 12, 2, seed=0)
    series.features = [np.arange(9.0)[:, None] + k for k in range(12)]
    p = list(reversed(range(9)))
    moved = series.permuted(p)
    assert np.array_equal(moved.adjacency[3], series.adjacency[3][np.ix_(p, p)])
    assert np.array_equal(moved.features[5][:, 0], series.features[5][p, 0])


def test_series_json_round_trip(tmp_path):
    series = build_series("grid", 9, 1.0, 12, 2, seed=0)
    series.features = [np.full((9, 1), float(k)) for k in range(12)]
    series.labels = [1]
    path = tmp_path / "series.json"
    save_series(series, path)

    payload = json.loads(path.read_text())
    assert all(i < j for edges in payload["adjacency"] for i, j in edges)
    loaded = load_series(path)
    assert np.array_equal(loaded.times, series.times)
    assert all(np.array_equal(a, b) for a, b in zip(loaded.adjacency, series.adjacency))
    assert loaded.split == series.split
    assert loaded.labels == [1]


def test_malformed_series_payload(tmp_path):
    payload = series_to_dict(build_series("grid", 4, 1.0, 12, 1, seed=0))
    del payload["splits"]
    with pytest.raises(DatasetFormatError):
        series_from_dict(payload)

    payload = series_to_dict(build_series("grid", 4, 1.0, 12, 1, seed=0))
    payload["splits"][0] = payload["splits"][0][1:]
    with pytest.raises(DatasetFormatError):
        series_from_dict(payload)

    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(DatasetFormatError):
        load_series(path)
