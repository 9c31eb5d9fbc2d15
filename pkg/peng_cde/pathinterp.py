import dataclasses
from typing import List, Protocol, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import DomainError, InvalidParameterError, ShapeError
from .tensor import Array, Tensor

# Relative slack for time stamps that overshoot the knot range by rounding.
DOMAIN_SLACK = 1e-10


class ControlPath(Protocol):
    @property
    def t0(self) -> float:
        ...

    @property
    def t1(self) -> float:
        ...

    def eval(self, t: float) -> Tensor:
        ...

    def deriv(self, t: float) -> Tensor:
        ...

    def snapshot(self, t: float) -> Tensor:
        ...


@dataclasses.dataclass(frozen=True)
class CubicPath:
    """Piecewise cubic interpolant, one cubic per knot interval and channel.

    ``coeffs[k]`` has shape ``(4, *channel_shape)`` and holds the polynomial
    ``a + b*s + c*s**2 + d*s**3`` in ``s = t - knots[k]``.
    """

    knots: Array
    coeffs: Array
    samples: Array

    @property
    def channel_shape(self) -> Tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    @property
    def t0(self) -> float:
        return float(self.knots[0])

    @property
    def t1(self) -> float:
        return float(self.knots[-1])

    def _locate(self, t: float) -> Tuple[int, float]:
        slack = DOMAIN_SLACK * max(1.0, self.t1 - self.t0)
        if not self.t0 - slack <= t <= self.t1 + slack:
            raise DomainError(
                f"t={t!r} is outside the path domain [{self.t0}, {self.t1}]"
            )
        t = min(max(t, self.t0), self.t1)
        k = int(np.searchsorted(self.knots, t, side="right")) - 1
        k = min(max(k, 0), len(self.knots) - 2)
        return k, t - float(self.knots[k])

    def value(self, t: float) -> Array:
        k, s = self._locate(t)
        a, b, c, d = self.coeffs[k]
        return a + s * (b + s * (c + s * d))

    def derivative(self, t: float) -> Array:
        k, s = self._locate(t)
        _, b, c, d = self.coeffs[k]
        return b + s * (2.0 * c + 3.0 * s * d)

    def second_derivative(self, t: float, side: str = "right") -> Array:
        """One-sided second derivative; at a knot ``side`` picks the interval."""
        k, s = self._locate(t)
        if side == "left" and s == 0.0 and k > 0:
            k, s = k - 1, float(self.knots[k] - self.knots[k - 1])
        _, _, c, d = self.coeffs[k]
        return 2.0 * c + 6.0 * s * d

    def eval(self, t: float) -> Tensor:
        return Tensor._wrap(self.value(t))

    def deriv(self, t: float) -> Tensor:
        return Tensor._wrap(self.derivative(t))

    def snapshot(self, t: float) -> Tensor:
        """Sample at the most recent knot <= t (left-continuous hold)."""
        k, _ = self._locate(t)
        if k == len(self.knots) - 2 and t >= self.t1:
            k += 1
        return Tensor._wrap(self.samples[k].copy())


def fit(times: Sequence[float], samples: Sequence[Array]) -> CubicPath:
    """Natural cubic spline through ``samples`` at ``times``, channel by channel."""
    knots = np.asarray(times, dtype=np.float64)
    if len(knots) < 2 or len(samples) != len(knots):
        raise InvalidParameterError("a path needs at least two samples, one per time")
    if np.any(np.diff(knots) <= 0):
        raise InvalidParameterError("knot times must be strictly increasing")
    shapes = {np.shape(s) for s in samples}
    if len(shapes) != 1:
        raise ShapeError(f"samples must share one channel shape, got {shapes}")

    stacked = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    y = stacked.reshape(len(knots), -1)
    h = np.diff(knots)[:, None]
    slopes = np.diff(y, axis=0) / h

    # Second derivatives at the knots; zero at both ends.
    m = np.zeros_like(y)
    if len(knots) > 2:
        interior = len(knots) - 2
        banded = np.zeros((3, interior))
        banded[0, 1:] = h[1:-1, 0]
        banded[1, :] = 2.0 * (h[:-1, 0] + h[1:, 0])
        banded[2, :-1] = h[1:-1, 0]
        rhs = 6.0 * (slopes[1:] - slopes[:-1])
        m[1:-1] = linalg.solve_banded((1, 1), banded, rhs)

    a = y[:-1]
    b = slopes - h * (2.0 * m[:-1] + m[1:]) / 6.0
    c = m[:-1] / 2.0
    d = (m[1:] - m[:-1]) / (6.0 * h)
    coeffs = np.stack([a, b, c, d], axis=1).reshape(
        (len(knots) - 1, 4) + stacked.shape[1:]
    )
    return CubicPath(knots=knots, coeffs=coeffs, samples=stacked)


def augment_time(
    samples: Sequence[Array], times: Sequence[float], new_axis: bool = True
) -> List[Array]:
    """Prepend a channel that holds the time stamp of each sample.

    With ``new_axis`` an ``n x n`` snapshot becomes ``n x n x 2`` (channel 0 is
    time); otherwise the last axis grows by one, e.g. ``n x d`` to ``n x (d + 1)``.
    """
    out = []
    for sample, t in zip(samples, times):
        sample = np.asarray(sample, dtype=np.float64)
        if new_axis:
            sample = sample[..., None]
        clock = np.full(sample.shape[:-1] + (1,), float(t))
        out.append(np.concatenate([clock, sample], axis=-1))
    return out


@dataclasses.dataclass(frozen=True)
class MonotoneCubicWarp:
    """phi(s) = t0 + span * (u + strength * u (1 - u) (1 - 2u)), u = (s - t0) / span.

    Strictly increasing for strength in (-1, 2) and fixes both endpoints.
    """

    t0: float
    t1: float
    strength: float = 0.5

    def __post_init__(self) -> None:
        if not -1.0 < self.strength < 2.0:
            raise InvalidParameterError("warp strength must lie in (-1, 2)")
        if self.t1 <= self.t0:
            raise InvalidParameterError("warp needs t0 < t1")

    def _u(self, s: float) -> float:
        return (s - self.t0) / (self.t1 - self.t0)

    def __call__(self, s: float) -> float:
        u = self._u(s)
        w = u + self.strength * u * (1.0 - u) * (1.0 - 2.0 * u)
        return self.t0 + (self.t1 - self.t0) * w

    def deriv(self, s: float) -> float:
        u = self._u(s)
        return 1.0 + self.strength * (1.0 - 6.0 * u + 6.0 * u * u)


@dataclasses.dataclass(frozen=True)
class WarpedPath:
    """The path ``s -> path(phi(s))`` with its chain-rule derivative."""

    path: CubicPath
    warp: MonotoneCubicWarp

    @property
    def t0(self) -> float:
        return self.path.t0

    @property
    def t1(self) -> float:
        return self.path.t1

    def eval(self, t: float) -> Tensor:
        return self.path.eval(self.warp(t))

    def deriv(self, t: float) -> Tensor:
        return Tensor._wrap(self.path.derivative(self.warp(t)) * self.warp.deriv(t))

    def snapshot(self, t: float) -> Tensor:
        return self.path.snapshot(self.warp(t))
