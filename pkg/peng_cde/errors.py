from typing import Any, Dict, List, Optional


class PengCdeError(Exception):
    """Base class for all errors raised by peng_cde."""


class ShapeError(PengCdeError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(PengCdeError, ArithmeticError):
    """A NaN or Inf value was produced or supplied."""


class RecordError(PengCdeError):
    """The computation record was used incorrectly (e.g. non-scalar loss)."""


class InvalidParameterError(PengCdeError, ValueError):
    """A generator, system or configuration parameter is out of range."""


class DomainError(PengCdeError, ValueError):
    """A path was evaluated outside of its knot range."""


class SnapError(PengCdeError, ValueError):
    """A save time does not fall on the fixed-step grid."""


class DatasetFormatError(PengCdeError, ValueError):
    """A dataset or checkpoint file does not follow the expected layout."""


class SolverError(PengCdeError, ArithmeticError):
    """An ODE solve could not be completed."""


class StepUnderflowError(SolverError):
    """The adaptive solver step size dropped below the allowed minimum."""

    def __init__(
        self, t: float, dt: float, span: float, stats: Optional[Dict[str, int]] = None
    ) -> None:
        self.t = t
        self.dt = dt
        self.span = span
        self.stats = dict(stats or {})
        super().__init__(
            f"Step size underflow at t={t:.6g}: dt={dt:.3e} < 1e-12 * span "
            f"(span={span:.6g}, stats={self.stats})"
        )


class RankDeficientBasisError(PengCdeError):
    """The materialized equivariant basis does not have full rank 15."""

    def __init__(self, n: int, rank: int) -> None:
        self.n = n
        self.rank = rank
        super().__init__(
            f"The 15 equivariant basis maps have rank {rank} < 15 at n={n}; "
            "a unique decomposition needs n >= 4."
        )


class TrainingDivergedError(PengCdeError, ArithmeticError):
    """A non-finite loss was met during training."""

    def __init__(
        self, epoch: int, params: Any, history: List[Dict[str, float]]
    ) -> None:
        self.epoch = epoch
        self.params = params
        self.history = history
        super().__init__(
            f"Non-finite loss at epoch {epoch}; "
            "the last good parameters are attached to this error."
        )
