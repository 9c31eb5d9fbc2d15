import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import networkx as nx
import numpy as np

from .constants import (
    DEFAULT_FLIP_RATE,
    EXTRAP_FRACTION,
    GRAPH_DEFAULTS,
    GRAPH_KINDS,
    INTERP_FRACTION,
)
from .errors import DatasetFormatError, InvalidParameterError
from .tensor import Array

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class DataSplit:
    """Snapshot indices per role; extrap_val is always the final block."""

    train: List[int]
    interp_val: List[int]
    extrap_val: List[int]

    def indices(self, role: str) -> List[int]:
        try:
            return {
                "train": self.train,
                "interp": self.interp_val,
                "extrap": self.extrap_val,
            }[role]
        except KeyError:
            raise ValueError(f"Unknown split role {role!r}") from None


@dataclasses.dataclass
class DynamicGraphSeries:
    times: Array
    adjacency: List[Array]
    split: DataSplit
    change_times: List[float] = dataclasses.field(default_factory=list)
    features: Optional[List[Array]] = None
    labels: Optional[List[int]] = None
    meta: Dict[str, Any] = dataclasses.field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.adjacency[0].shape[0])

    @property
    def num_times(self) -> int:
        return int(len(self.times))

    @property
    def feature_dim(self) -> int:
        return 0 if not self.features else int(self.features[0].shape[1])

    def validate(self) -> None:
        if len(self.adjacency) != len(self.times):
            raise DatasetFormatError("one adjacency matrix per time stamp is required")
        if np.any(np.diff(self.times) <= 0):
            raise DatasetFormatError("time stamps must be strictly increasing")
        for a in self.adjacency:
            if not np.array_equal(a, a.T) or np.any(np.diag(a) != 0):
                raise DatasetFormatError("adjacency must be symmetric, zero diagonal")
        if self.features is not None and len(self.features) != len(self.times):
            raise DatasetFormatError("one feature matrix per time stamp is required")
        every = sorted(self.split.train + self.split.interp_val + self.split.extrap_val)
        if every != list(range(self.num_times)):
            raise DatasetFormatError("splits must partition all snapshot indices")

    def permuted(self, perm: Sequence[int]) -> "DynamicGraphSeries":
        """Relabel nodes: node i of the result is node perm[i] of this series."""
        p = np.asarray(perm)
        return dataclasses.replace(
            self,
            adjacency=[a[np.ix_(p, p)] for a in self.adjacency],
            features=None if self.features is None else [x[p] for x in self.features],
        )


def _rng(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    return np.random.default_rng(seed)


def _grid_rows(n: int, rows: Optional[int]) -> int:
    if rows is None:
        rows = max(r for r in range(1, int(math.isqrt(n)) + 1) if n % r == 0)
    if rows < 1 or n % rows:
        raise InvalidParameterError(
            f"grid needs n = rows x cols, got n={n}, rows={rows}"
        )
    return rows


def gen_graph(kind: str, n: int, seed: int, **params: Any) -> Array:
    """Sample a symmetric 0/1 adjacency matrix with zero diagonal."""
    if kind not in GRAPH_KINDS:
        raise InvalidParameterError(
            f"Unknown graph kind {kind!r}; expected {GRAPH_KINDS}"
        )
    if n < 2:
        raise InvalidParameterError("a graph needs at least 2 nodes")
    options = {**GRAPH_DEFAULTS[kind], **params}

    if kind == "grid":
        rows = _grid_rows(n, options["rows"])
        graph = nx.convert_node_labels_to_integers(
            nx.grid_2d_graph(rows, n // rows), ordering="sorted"
        )
    elif kind == "small-world":
        k, p = int(options["k"]), float(options["p"])
        if k % 2 or k < 2 or k >= n or not 0.0 <= p <= 1.0:
            raise InvalidParameterError(
                f"small-world needs even 2 <= k < n and p in [0, 1], got k={k}, p={p}"
            )
        graph = nx.watts_strogatz_graph(n, k, p, seed=seed)
    elif kind == "power-law":
        m = int(options["m"])
        if not 1 <= m < n:
            raise InvalidParameterError(f"power-law needs 1 <= m < n, got m={m}")
        graph = nx.barabasi_albert_graph(n, m, seed=seed)
    else:
        blocks = int(options["blocks"])
        p_in, p_out = float(options["p_in"]), float(options["p_out"])
        if not 1 <= blocks <= n or not 0.0 <= p_out < p_in <= 1.0:
            raise InvalidParameterError(
                "community needs 1 <= blocks <= n and 0 <= p_out < p_in <= 1"
            )
        sizes = [n // blocks + (1 if b < n % blocks else 0) for b in range(blocks)]
        probs = [
            [p_in if i == j else p_out for j in range(blocks)] for i in range(blocks)
        ]
        graph = nx.stochastic_block_model(sizes, probs, seed=seed)

    adjacency = nx.to_numpy_array(graph, nodelist=range(n), dtype=np.float64)
    np.fill_diagonal(adjacency, 0.0)
    return (adjacency > 0).astype(np.float64)


def symmetric_draws(n: int, rng: np.random.Generator) -> Array:
    """One uniform draw per unordered node pair, mirrored across the diagonal."""
    upper = np.triu(rng.random((n, n)), 1)
    return upper + upper.T


def perturb_with_draws(adjacency: Array, draws: Array, flip_rate: float) -> Array:
    """Flip every pair (i, j), i != j, whose draw falls below ``flip_rate``."""
    flips = np.triu(draws < flip_rate, 1)
    flips = flips | flips.T
    return np.where(flips, 1.0 - adjacency, adjacency)


def perturb(
    adjacency: Array, seed: Union[int, np.random.SeedSequence], flip_rate: float
) -> Array:
    if not 0.0 < flip_rate < 1.0:
        raise InvalidParameterError(f"flip rate must lie in (0, 1), got {flip_rate}")
    draws = symmetric_draws(adjacency.shape[0], _rng(seed))
    return perturb_with_draws(adjacency, draws, flip_rate)


def make_split(num_times: int, rng: np.random.Generator) -> DataSplit:
    n_extrap = int(round(num_times * EXTRAP_FRACTION))
    n_interp = int(round(num_times * INTERP_FRACTION))
    head = num_times - n_extrap
    if n_extrap < 1 or n_interp < 1 or head - n_interp < 1:
        raise InvalidParameterError(f"{num_times} snapshots are too few to split")
    interp = sorted(int(i) for i in rng.choice(head, size=n_interp, replace=False))
    chosen = set(interp)
    return DataSplit(
        train=[i for i in range(head) if i not in chosen],
        interp_val=interp,
        extrap_val=list(range(head, num_times)),
    )


def build_series(
    kind: str,
    n: int,
    t_end: float,
    num_times: int,
    num_changes: int,
    flip_rate: float = DEFAULT_FLIP_RATE,
    seed: int = 0,
    times: Optional[Array] = None,
    graph_params: Optional[Dict[str, Any]] = None,
) -> DynamicGraphSeries:
    """Sample a dynamic graph whose topology changes at ``num_changes`` snapshots.

    Change indices never include the first snapshot. ``times`` overrides the
    default uniform sampling of time stamps (e.g. with :func:`gamma_times`).
    """
    if num_times < 2 or not 0 <= num_changes < num_times:
        raise InvalidParameterError(
            f"degenerate counts: num_times={num_times}, num_changes={num_changes}"
        )
    graph_seq, times_seq, change_seq, split_seq, flip_seq = np.random.SeedSequence(
        seed
    ).spawn(5)

    if times is None:
        times = np.sort(_rng(times_seq).uniform(0.0, t_end, size=num_times))
    times = np.asarray(times, dtype=np.float64)
    if len(times) != num_times or np.any(np.diff(times) <= 0):
        raise InvalidParameterError("time stamps must be strictly increasing")

    change_idx = sorted(
        int(i)
        for i in _rng(change_seq).choice(
            np.arange(1, num_times), size=num_changes, replace=False
        )
    )
    initial = gen_graph(
        kind, n, int(graph_seq.generate_state(1)[0]), **(graph_params or {})
    )
    flip_seeds = flip_seq.spawn(num_changes)

    adjacency = [initial]
    changes = iter(zip(change_idx, flip_seeds))
    upcoming = next(changes, None)
    for k in range(1, num_times):
        current = adjacency[-1]
        if upcoming is not None and upcoming[0] == k:
            current = perturb(current, upcoming[1], flip_rate)
            upcoming = next(changes, None)
        adjacency.append(current)

    series = DynamicGraphSeries(
        times=times,
        adjacency=adjacency,
        split=make_split(num_times, _rng(split_seq)),
        change_times=[float(times[k]) for k in change_idx],
        meta={
            "kind": kind,
            "n": n,
            "seed": seed,
            "t_end": t_end,
            "num_times": num_times,
            "num_changes": num_changes,
            "flip_rate": flip_rate,
            "graph_params": dict(graph_params or {}),
        },
    )
    logger.debug(
        "series kind=%s n=%d times=%d changes=%d seed=%d",
        kind,
        n,
        num_times,
        num_changes,
        seed,
    )
    return series


# Serialization -----------------------------------------------------------------


def _edges(adjacency: Array) -> List[List[int]]:
    rows, cols = np.nonzero(np.triu(adjacency, 1))
    return [[int(i), int(j)] for i, j in zip(rows, cols)]


def series_to_dict(series: DynamicGraphSeries) -> Dict[str, Any]:
    payload: Dict[str, Any] = {
        "times": [float(t) for t in series.times],
        "adjacency": [_edges(a) for a in series.adjacency],
        "change_times": list(series.change_times),
        "splits": [
            list(series.split.train),
            list(series.split.interp_val),
            list(series.split.extrap_val),
        ],
        "meta": {**series.meta, "n": series.n},
    }
    if series.features is not None:
        payload["features"] = [x.tolist() for x in series.features]
    if series.labels is not None:
        payload["labels"] = list(series.labels)
    return payload


def series_from_dict(payload: Dict[str, Any]) -> DynamicGraphSeries:
    try:
        n = int(payload["meta"]["n"])
        adjacency = []
        for edges in payload["adjacency"]:
            a = np.zeros((n, n))
            for i, j in edges:
                a[i, j] = a[j, i] = 1.0
            adjacency.append(a)
        train, interp, extrap = payload["splits"]
        series = DynamicGraphSeries(
            times=np.asarray(payload["times"], dtype=np.float64),
            adjacency=adjacency,
            split=DataSplit(list(train), list(interp), list(extrap)),
            change_times=list(payload.get("change_times", [])),
            features=(
                [np.asarray(x, dtype=np.float64) for x in payload["features"]]
                if payload.get("features") is not None
                else None
            ),
            labels=payload.get("labels"),
            meta=dict(payload["meta"]),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise DatasetFormatError(f"Malformed series payload: {e}") from e
    series.validate()
    return series


def save_series(series: DynamicGraphSeries, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(series_to_dict(series), f, sort_keys=True)


def load_series(path: Union[str, Path]) -> DynamicGraphSeries:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path} is not valid JSON: {e}") from e
    return series_from_dict(payload)
