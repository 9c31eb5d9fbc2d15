import dataclasses
import logging
import math
import warnings
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_FLIP_RATE, SIR_LABELS, SIR_REGIMES, TASKS
from .errors import InvalidParameterError, NonFiniteError, ShapeError
from .graphgen import DynamicGraphSeries, build_series
from .tensor import Array

logger = logging.getLogger(__name__)

MAX_SUBSTEP = 1e-2
BLOW_UP = 1e9
SIR_INITIAL_INFECTED = 0.05


@dataclasses.dataclass(frozen=True)
class SystemSpec:
    kind: str
    gene_f: float = 1.0
    savings: Optional[Tuple[float, ...]] = None
    growth: float = 0.05
    threshold_level: float = 0.5
    beta: float = SIR_REGIMES["outbreak"]["beta"]
    gamma: float = SIR_REGIMES["outbreak"]["gamma"]

    def __post_init__(self) -> None:
        if self.kind not in TASKS:
            raise InvalidParameterError(
                f"Unknown system {self.kind!r}; expected {TASKS}"
            )
        scalars = (
            self.gene_f,
            self.growth,
            self.threshold_level,
            self.beta,
            self.gamma,
        )
        if not all(math.isfinite(v) for v in scalars):
            raise InvalidParameterError("system parameters must be finite")
        if self.savings is not None and not all(math.isfinite(s) for s in self.savings):
            raise InvalidParameterError("savings rates must be finite")
        if self.kind == "sir" and (self.beta <= 0 or self.gamma <= 0):
            raise InvalidParameterError("sir needs beta > 0 and gamma > 0")

    @classmethod
    def sir(cls, regime: str) -> "SystemSpec":
        try:
            rates = SIR_REGIMES[regime]
        except KeyError:
            raise InvalidParameterError(
                f"Unknown SIR regime {regime!r}; expected {sorted(SIR_REGIMES)}"
            ) from None
        return cls(kind="sir", beta=rates["beta"], gamma=rates["gamma"])

    @property
    def channels(self) -> int:
        return 3 if self.kind == "sir" else 1

    def with_savings(self, n: int, rng: np.random.Generator) -> "SystemSpec":
        """Draw per-node savings rates s_u ~ U[0, 0.1] unless already fixed."""
        if self.kind != "wealth" or self.savings is not None:
            return self
        return dataclasses.replace(
            self, savings=tuple(float(s) for s in rng.uniform(0.0, 0.1, size=n))
        )


def rhs(spec: SystemSpec, adjacency: Array, x: Array) -> Array:
    """dx/dt of the chosen system; ``x`` is n x channels."""
    n = adjacency.shape[0]
    if x.shape != (n, spec.channels):
        raise ShapeError(
            f"{spec.kind} state must be {(n, spec.channels)}, got {x.shape}"
        )
    degree = adjacency.sum(axis=1, keepdims=True)

    if spec.kind == "heat":
        # Dissipative sign: sum_v A_uv (x_v/sqrt(d_v) - x_u/sqrt(d_u)).
        # x/sqrt(d) is taken as 0 on isolated nodes.
        scaled = np.divide(x, np.sqrt(degree), out=np.zeros_like(x), where=degree > 0)
        return adjacency @ scaled - degree * scaled
    if spec.kind == "gene":
        return -spec.gene_f * x + adjacency @ (x / (x + 1.0))
    if spec.kind == "wealth":
        if spec.savings is None or len(spec.savings) != n:
            raise InvalidParameterError("wealth needs one savings rate per node")
        if np.any(x < 0):
            warnings.warn(
                "negative capital clamped to 0 in the fractional power",
                RuntimeWarning,
                stacklevel=2,
            )
        savings = np.asarray(spec.savings)[:, None]
        power = np.power(np.clip(x, 0.0, None), 0.6)
        return savings * power + (adjacency @ x - degree * x) + spec.growth * x
    if spec.kind == "opinion":
        pressure = adjacency @ x
        return -x + (pressure >= spec.threshold_level).astype(np.float64)

    s, i = x[:, :1], x[:, 1:2]
    infection = spec.beta * s * (adjacency @ i)
    recovery = spec.gamma * i
    return np.concatenate([-infection, infection - recovery, recovery], axis=1)


def _rk4_hold(spec: SystemSpec, adjacency: Array, x: Array, span: float) -> Array:
    steps = max(1, int(math.ceil(span / MAX_SUBSTEP - 1e-9)))
    h = span / steps
    for _ in range(steps):
        k1 = rhs(spec, adjacency, x)
        k2 = rhs(spec, adjacency, x + 0.5 * h * k1)
        k3 = rhs(spec, adjacency, x + 0.5 * h * k2)
        k4 = rhs(spec, adjacency, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def simulate(
    spec: SystemSpec, series: DynamicGraphSeries, x0: Array, seed: int = 0
) -> List[Array]:
    """Node states at every series time; adjacency[k] is held on [t_k, t_k+1).

    ``seed`` only draws wealth savings rates when ``spec.savings`` is unset.
    """
    x = np.asarray(x0, dtype=np.float64)
    if x.shape != (series.n, spec.channels):
        raise ShapeError(f"x0 must be {(series.n, spec.channels)}, got {x.shape}")
    spec = spec.with_savings(series.n, np.random.default_rng(seed))

    snapshots = [x.copy()]
    for k in range(1, series.num_times):
        span = float(series.times[k] - series.times[k - 1])
        x = _rk4_hold(spec, series.adjacency[k - 1], x, span)
        peak = float(np.max(np.abs(x))) if np.all(np.isfinite(x)) else math.inf
        if peak > BLOW_UP:
            raise NonFiniteError(
                f"{spec.kind} dynamics blew up at t={series.times[k]:.6g} "
                f"(max |x|={peak:.3e})"
            )
        snapshots.append(x.copy())
    logger.debug(
        "simulate kind=%s n=%d times=%d", spec.kind, series.n, series.num_times
    )
    return snapshots


def initial_state(spec: SystemSpec, n: int, rng: np.random.Generator) -> Array:
    if spec.kind in ("heat", "gene", "wealth"):
        return rng.uniform(0.0, 25.0, size=(n, 1))
    if spec.kind == "opinion":
        return rng.uniform(-1.0, 1.0, size=(n, 1))
    infected = np.zeros(n)
    count = max(1, int(round(SIR_INITIAL_INFECTED * n)))
    infected[rng.choice(n, size=count, replace=False)] = 1.0
    return np.stack([1.0 - infected, infected, np.zeros(n)], axis=1)


def gamma_times(num_times: int, shape: float, t_end: float, seed: int = 0) -> Array:
    """``num_times`` stamps on [0, t_end] with rescaled Gamma(shape, 1) gaps."""
    if num_times < 2:
        raise InvalidParameterError("gamma_times needs at least 2 time stamps")
    if shape <= 0 or t_end <= 0:
        raise InvalidParameterError("shape and t_end must be positive")
    gaps = np.random.default_rng(seed).gamma(shape, 1.0, size=num_times - 1)
    times = np.concatenate([[0.0], np.cumsum(gaps / gaps.sum() * t_end)])
    times[-1] = t_end
    return times


def sir_label(spec: SystemSpec, trajectory: Optional[Sequence[Array]] = None) -> str:
    """Regime name of a SIR trajectory.

    Known parameter settings decide directly; any other setting is labelled an
    outbreak when the mean infected fraction ever exceeds its initial value.
    """
    if spec.kind != "sir":
        raise InvalidParameterError("sir_label needs a sir system")
    for regime, rates in SIR_REGIMES.items():
        if spec.beta == rates["beta"] and spec.gamma == rates["gamma"]:
            return regime
    if trajectory is None:
        raise InvalidParameterError("unknown SIR rates need a trajectory to label")
    infected = [float(np.mean(x[:, 1])) for x in trajectory]
    return "outbreak" if max(infected[1:], default=0.0) > infected[0] else "die-out"


def make_task_series(
    task: str,
    kind: str,
    n: int,
    t_end: float,
    num_times: int,
    num_changes: int,
    seed: int = 0,
    regime: Optional[str] = None,
    gamma_shape: Optional[float] = None,
    flip_rate: float = DEFAULT_FLIP_RATE,
    graph_params: Optional[Dict[str, Any]] = None,
    system: Optional[Dict[str, Any]] = None,
) -> DynamicGraphSeries:
    """A dynamic graph series with simulated node features (and a label for sir)."""
    graph_seed, times_seed, state_seed, sim_seed = (
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(4)
    )
    if task == "sir":
        spec = SystemSpec.sir(regime or "outbreak")
    else:
        spec = SystemSpec(kind=task)
    if system:
        spec = dataclasses.replace(spec, **system)

    times = None
    if gamma_shape is not None:
        times = gamma_times(num_times, gamma_shape, t_end, times_seed)
    series = build_series(
        kind,
        n,
        t_end,
        num_times,
        num_changes,
        flip_rate=flip_rate,
        seed=graph_seed,
        times=times,
        graph_params=graph_params,
    )
    x0 = initial_state(spec, n, np.random.default_rng(state_seed))
    series.features = simulate(spec, series, x0, seed=sim_seed)
    series.meta.update({"task": task, "seed": seed})
    if gamma_shape is not None:
        series.meta["gamma_shape"] = gamma_shape
    if task == "sir":
        label = sir_label(spec, series.features)
        series.labels = [SIR_LABELS[label]]
        series.meta["regime"] = label
    return series
