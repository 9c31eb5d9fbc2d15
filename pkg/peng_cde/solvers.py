"""Explicit Runge-Kutta solvers for latent ODEs on :class:`Tensor` states.

Stages are built from recorded tensor operations, so gradients flow through the
unrolled steps. Step-size control reads detached values only.
"""
import dataclasses
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    InvalidParameterError,
    NonFiniteError,
    ShapeError,
    SnapError,
    SolverError,
    StepUnderflowError,
)
from .tensor import Array, Tensor, add_n

logger = logging.getLogger(__name__)

Field = Callable[[float, Tensor], Tensor]

SOLVER_METHODS = ("tsit5", "rk4")

MIN_STEP_FRACTION = 1e-12
SNAP_TOLERANCE = 1e-9

# Tsitouras 5(4) tableau.
TSIT5_C = (0.0, 0.161, 0.327, 0.9, 0.9800255409045097, 1.0, 1.0)
TSIT5_A = (
    (),
    (0.161,),
    (-0.008480655492356989, 0.335480655492357),
    (2.897153057105493, -6.359448489975075, 4.3622954328695815),
    (
        5.325864828439257,
        -11.748883564062828,
        7.4955393428898365,
        -0.09249506636175525,
    ),
    (
        5.86145544294642,
        -12.92096931784711,
        8.159367898576159,
        -0.071584973281401,
        -0.028269050394068383,
    ),
)
TSIT5_B = (
    0.09646076681806523,
    0.01,
    0.4798896504144996,
    1.379008574103742,
    -3.290069515436081,
    2.324710524099774,
    0.0,
)
TSIT5_BTILDE = (
    -0.00178001105222577714,
    -0.0008164344596567469,
    0.007880878010261995,
    -0.1447110071732629,
    0.5823571654525552,
    -0.45808210592918697,
    1.0 / 66.0,
)

SAFETY = 0.9
PI_ALPHA = 0.14
PI_BETA = 0.08
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


def tsit5_dense_weights(theta: float) -> List[float]:
    """Dense-output weights: z(t + theta dt) = z + dt sum_i b_i(theta) k_i."""
    t = theta
    t2 = t * t
    return [
        -1.0530884977290216
        * t
        * (t - 1.3299890189751412)
        * (t2 - 1.4364028541716351 * t + 0.7139816917074209),
        0.1017 * t2 * (t2 - 2.1966568338249754 * t + 1.2949852507374631),
        2.490627285651252793
        * t2
        * (t2 - 2.38535645472061657 * t + 1.57803468208092486),
        -16.54810288924490272
        * (t - 1.21712927295533244)
        * (t - 0.61620406037800089)
        * t2,
        47.37952196281928122
        * (t - 1.203071208372362603)
        * (t - 0.658047292653547382)
        * t2,
        -34.87065786149660974 * (t - 1.2) * (t - 0.666666666666666667) * t2,
        2.5 * (t - 1.0) * (t - 0.6) * t2,
    ]


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    method: str = "tsit5"
    rtol: float = 1e-3
    atol: float = 1e-6
    dt0: Optional[float] = None
    num_steps: int = 128
    max_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.method not in SOLVER_METHODS:
            raise InvalidParameterError(
                f"Unknown solver {self.method!r}; expected one of {SOLVER_METHODS}"
            )
        if self.rtol <= 0 or self.atol <= 0:
            raise InvalidParameterError("rtol and atol must be positive")
        if self.num_steps < 1:
            raise InvalidParameterError("num_steps must be >= 1")
        if self.dt0 is not None and self.dt0 <= 0:
            raise InvalidParameterError("dt0 must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SolverConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in fields})


@dataclasses.dataclass
class SolverStats:
    accepted: int = 0
    rejected: int = 0
    evaluations: int = 0

    def as_dict(self) -> Dict[str, int]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class LatentPath:
    save_times: List[float]
    states: List[Tensor]
    stats: SolverStats


def _check_save_times(save_times: Sequence[float], t0: float, t1: float) -> List[float]:
    times = [float(s) for s in save_times]
    slack = SNAP_TOLERANCE * (t1 - t0)
    if any(b < a for a, b in zip(times, times[1:])):
        raise InvalidParameterError("save times must be sorted")
    if times and (times[0] < t0 - slack or times[-1] > t1 + slack):
        raise InvalidParameterError(
            f"save times must lie in [{t0}, {t1}], got [{times[0]}, {times[-1]}]"
        )
    return times


def _counted(field: Field, stats: SolverStats) -> Field:
    def evaluate(t: float, z: Tensor) -> Tensor:
        stats.evaluations += 1
        out = field(t, z)
        if out.shape != z.shape:
            raise ShapeError(f"field returned shape {out.shape} for state {z.shape}")
        return out

    return evaluate


def _combine(
    z: Tensor, ks: Sequence[Tensor], weights: Sequence[float], dt: float
) -> Tensor:
    terms = [k * (dt * w) for k, w in zip(ks, weights) if w != 0.0]
    return z if not terms else z + add_n(terms)


def tsit5_solve(
    field: Field,
    z0: Tensor,
    t0: float,
    t1: float,
    save_times: Sequence[float],
    rtol: float = 1e-3,
    atol: float = 1e-6,
    dt0: Optional[float] = None,
    max_steps: int = 100_000,
) -> LatentPath:
    """Adaptive Tsitouras 5(4) with a PI controller and 4th-order dense output."""
    if not t1 > t0:
        raise InvalidParameterError(f"tsit5 needs t0 < t1, got [{t0}, {t1}]")
    times = _check_save_times(save_times, t0, t1)
    span = t1 - t0
    dt = span / 100.0 if dt0 is None else float(dt0)
    if dt <= 0:
        raise InvalidParameterError("dt0 must be positive")

    stats = SolverStats()
    f = _counted(field, stats)
    eps = MIN_STEP_FRACTION * span

    states: List[Tensor] = []
    pending = 0
    while pending < len(times) and times[pending] <= t0 + eps:
        states.append(z0)
        pending += 1

    t, z = t0, z0
    k1 = f(t, z)
    previous_norm = 1.0
    while t1 - t > eps:
        if stats.accepted + stats.rejected >= max_steps:
            raise SolverError(f"tsit5 exceeded {max_steps} steps at t={t:.6g}")
        if dt < eps:
            raise StepUnderflowError(t, dt, span, stats.as_dict())
        last = t + dt >= t1 - eps
        h = t1 - t if last else dt

        ks = [k1]
        for c, row in zip(TSIT5_C[1:6], TSIT5_A[1:]):
            ks.append(f(t + c * h, _combine(z, ks, row, h)))
        z_new = _combine(z, ks, TSIT5_B, h)
        k7 = f(t + h, z_new)
        ks.append(k7)

        err = h * sum(e * k.data for e, k in zip(TSIT5_BTILDE, ks))
        scale = atol + rtol * np.maximum(np.abs(z.data), np.abs(z_new.data))
        norm = float(np.sqrt(np.mean(np.square(err / scale))))
        if not math.isfinite(norm):
            raise NonFiniteError(f"tsit5 error estimate is not finite at t={t:.6g}")

        if norm <= 1.0:
            stats.accepted += 1
            t_new = t1 if last else t + h
            while pending < len(times) and times[pending] <= t_new + eps:
                s = times[pending]
                if abs(s - t_new) <= eps:
                    states.append(z_new)
                else:
                    states.append(_combine(z, ks, tsit5_dense_weights((s - t) / h), h))
                pending += 1
            if norm == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * norm ** (-PI_ALPHA) * previous_norm**PI_BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            previous_norm = max(norm, 1e-4)
            t, z, k1 = t_new, z_new, k7
            dt = h * factor
        else:
            stats.rejected += 1
            dt = h * max(MIN_FACTOR, SAFETY * norm ** (-0.2))

    while pending < len(times):
        states.append(z)
        pending += 1

    logger.debug(
        "tsit5 span=[%.4g, %.4g] accepted=%d rejected=%d evaluations=%d",
        t0,
        t1,
        stats.accepted,
        stats.rejected,
        stats.evaluations,
    )
    return LatentPath(save_times=times, states=states, stats=stats)


def refined_grid(
    save_times: Sequence[float], t0: float, t1: float, num_steps: int
) -> Array:
    """Step grid through every save time with about ``num_steps`` steps in total."""
    span = t1 - t0
    knots = sorted({t0, t1, *(float(s) for s in save_times)})
    pieces = [np.array([t0])]
    for a, b in zip(knots, knots[1:]):
        m = max(1, int(math.ceil(num_steps * (b - a) / span)))
        pieces.append(np.linspace(a, b, m + 1)[1:])
    return np.concatenate(pieces)


def rk4_solve(
    field: Field,
    z0: Tensor,
    t0: float,
    t1: float,
    num_steps: int = 128,
    save_times: Optional[Sequence[float]] = None,
    grid: Optional[Sequence[float]] = None,
) -> LatentPath:
    """Classical RK4 on a uniform grid, or on an explicit increasing ``grid``.

    Every save time must coincide with a grid point (to 1e-9 of the span).
    """
    if not t1 > t0:
        raise InvalidParameterError(f"rk4 needs t0 < t1, got [{t0}, {t1}]")
    span = t1 - t0
    if grid is None:
        if num_steps < 1:
            raise InvalidParameterError("num_steps must be >= 1")
        points = np.linspace(t0, t1, num_steps + 1)
    else:
        points = np.asarray(grid, dtype=np.float64)
        if (
            len(points) < 2
            or np.any(np.diff(points) <= 0)
            or abs(points[0] - t0) > SNAP_TOLERANCE * span
            or abs(points[-1] - t1) > SNAP_TOLERANCE * span
        ):
            raise InvalidParameterError("grid must increase strictly from t0 to t1")
    times = _check_save_times([t1] if save_times is None else save_times, t0, t1)

    wanted: Dict[int, List[int]] = {}
    for i, s in enumerate(times):
        k = int(np.argmin(np.abs(points - s)))
        if abs(points[k] - s) > SNAP_TOLERANCE * span:
            raise SnapError(f"save time {s!r} is not on the step grid")
        wanted.setdefault(k, []).append(i)

    stats = SolverStats()
    f = _counted(field, stats)
    states: List[Optional[Tensor]] = [None] * len(times)
    z = z0
    for i in wanted.get(0, []):
        states[i] = z
    for k in range(1, len(points)):
        t, h = float(points[k - 1]), float(points[k] - points[k - 1])
        k1 = f(t, z)
        k2 = f(t + h / 2, z + k1 * (h / 2))
        k3 = f(t + h / 2, z + k2 * (h / 2))
        k4 = f(t + h, z + k3 * h)
        z = z + add_n([k1, k2 * 2.0, k3 * 2.0, k4]) * (h / 6)
        stats.accepted += 1
        for i in wanted.get(k, []):
            states[i] = z

    logger.debug("rk4 steps=%d evaluations=%d", stats.accepted, stats.evaluations)
    return LatentPath(
        save_times=times, states=[s for s in states if s is not None], stats=stats
    )


def solve(
    field: Field,
    z0: Tensor,
    save_times: Sequence[float],
    config: SolverConfig,
    t0: Optional[float] = None,
    grid: Optional[Sequence[float]] = None,
) -> LatentPath:
    """Integrate from ``t0`` (default: first save time) to the last save time."""
    if len(save_times) == 0:
        raise InvalidParameterError("at least one save time is required")
    start = float(save_times[0]) if t0 is None else float(t0)
    end = float(save_times[-1])
    if end <= start:
        times = [float(s) for s in save_times]
        return LatentPath(times, [z0] * len(times), SolverStats())
    if config.method == "rk4":
        if grid is None:
            grid = refined_grid(save_times, start, end, config.num_steps)
        return rk4_solve(field, z0, start, end, save_times=save_times, grid=grid)
    return tsit5_solve(
        field,
        z0,
        start,
        end,
        save_times,
        rtol=config.rtol,
        atol=config.atol,
        dt0=config.dt0,
        max_steps=config.max_steps,
    )
