import dataclasses
import logging
import time
from typing import Any, Dict, List, Sequence

from .graphgen import DynamicGraphSeries, build_series
from .model import ModelConfig, ModelParams, Variant
from .solvers import SolverConfig
from .tensor import record
from .trainer import OptimState, adam_step, batch_loss, named_grads

logger = logging.getLogger(__name__)

BENCH_SIZES = (128, 256, 512)
BENCH_VARIANTS = (Variant.PENG, Variant.PREMULT)
BENCH_SOLVER = SolverConfig(method="rk4", num_steps=4)
BENCH_HEADER = ["variant", "n", "seconds_per_epoch", "relative", "fusion_parameters"]


@dataclasses.dataclass(frozen=True)
class BenchRow:
    variant: str
    n: int
    seconds_per_epoch: float
    fusion_parameters: int
    relative: float = 1.0

    def as_row(self) -> List[Any]:
        return [
            self.variant,
            self.n,
            self.seconds_per_epoch,
            self.relative,
            self.fusion_parameters,
        ]


def time_epoch(
    params: ModelParams, series_list: Sequence[DynamicGraphSeries], repeats: int = 1
) -> float:
    """Median wall time of one training step (forward, backward, Adam)."""
    state = OptimState.zeros(params)
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        with record() as tape:
            loss = batch_loss(params, series_list, BENCH_SOLVER)
        adam_step(params, named_grads(params, tape.backward(loss)), state, 1e-3, 0.0)
        timings.append(time.perf_counter() - started)
    timings.sort()
    return timings[len(timings) // 2]


def run_bench(
    sizes: Sequence[int] = BENCH_SIZES,
    seed: int = 0,
    repeats: int = 1,
    num_times: int = 8,
    hidden: int = 8,
) -> List[BenchRow]:
    rows: List[BenchRow] = []
    baseline: Dict[str, float] = {}
    for n in sizes:
        series = build_series(
            "community", n, t_end=1.0, num_times=num_times, num_changes=2, seed=seed
        )
        # Targets only; the dynamics themselves are irrelevant to timing.
        series.features = [a.sum(axis=1, keepdims=True) / n for a in series.adjacency]
        for variant in BENCH_VARIANTS:
            params = ModelParams.initialize(
                ModelConfig.for_series(variant, series, hidden=hidden, seed=seed)
            )
            seconds = time_epoch(params, [series], repeats)
            first = baseline.setdefault(variant.value, seconds)
            rows.append(
                BenchRow(
                    variant=variant.value,
                    n=n,
                    seconds_per_epoch=seconds,
                    fusion_parameters=params.fusion_parameter_count(),
                    relative=seconds / first,
                )
            )
            logger.info(
                "bench variant=%s n=%d seconds=%.4f fusion_params=%d",
                variant.value,
                n,
                seconds,
                rows[-1].fusion_parameters,
            )
    return rows
