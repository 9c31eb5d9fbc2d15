"""Self-contained property suites with fixed seeds, run by the ``check`` command.

Each suite returns a list of :class:`CheckResult`; a result passes when its
deviation stays below the threshold, or above it for checks that expect a
violation (the non-equivariant Pre-Mult baseline).
"""
import dataclasses
import logging
import math
from typing import Any, Callable, Dict, List, Sequence

import numpy as np

from .constants import CHECK_SUITES, NUM_BASIS_MAPS
from .equivariant import (
    Permutation,
    basis_apply,
    basis_rank,
    conjugate,
    conjugation_matrix,
    lsq_decompose,
    permute_rows,
    project_group_average,
)
from .errors import InvalidParameterError, RankDeficientBasisError
from .graphgen import DynamicGraphSeries, build_series
from .model import (
    GraphControls,
    ModelConfig,
    ModelParams,
    PreMultField,
    Variant,
    forward,
    init_state,
    vector_field,
)
from .pathinterp import MonotoneCubicWarp
from .solvers import SolverConfig, rk4_solve, tsit5_solve
from .tensor import Array, Tensor, add_n, gradcheck, no_record

logger = logging.getLogger(__name__)

RK4 = SolverConfig(method="rk4", num_steps=128)


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    threshold: float
    expect_violation: bool = False
    case: Dict[str, Any] = dataclasses.field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.deviation):
            return False
        if self.expect_violation:
            return self.deviation > self.threshold
        return self.deviation < self.threshold

    def summary(self) -> str:
        relation = ">" if self.expect_violation else "<"
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: {self.deviation:.3e} "
            f"(required {relation} {self.threshold:.0e})"
        )


def _series(
    n: int, seed: int, num_times: int = 12, features: int = 0
) -> DynamicGraphSeries:
    series = build_series(
        "small-world" if n >= 5 else "grid",
        n,
        t_end=1.0,
        num_times=num_times,
        num_changes=2,
        flip_rate=0.2,
        seed=seed,
        graph_params={"k": 2} if n >= 5 else None,
    )
    if features:
        rng = np.random.default_rng(seed + 1)
        series.features = [rng.normal(size=(n, features)) for _ in series.times]
    return series


def _randomize_fusion(
    params: ModelParams, rng: np.random.Generator, scale: float
) -> None:
    for name, tensor in params.tensors.items():
        if name.startswith("fusion."):
            tensor.data[...] += scale * rng.normal(size=tensor.shape)


def _max_abs(a: Sequence[Tensor], b: Sequence[Array]) -> float:
    return max(float(np.max(np.abs(x.data - y))) for x, y in zip(a, b))


# Suites -----------------------------------------------------------------------


def check_equivariance(seed: int = 0, permutations: int = 20) -> List[CheckResult]:
    results = []
    rng = np.random.default_rng(seed)
    for n in (2, 3, 4):
        worst, worst_case = 0.0, {}
        a = Tensor._wrap(rng.integers(-5, 6, size=(n, n)).astype(np.float64))
        for perm in Permutation.all(n):
            for k in range(1, NUM_BASIS_MAPS + 1):
                left = basis_apply(k, conjugate(perm, a)).data
                right = conjugate(perm, basis_apply(k, a).data)
                deviation = float(np.max(np.abs(left - right)))
                if deviation > worst:
                    worst, worst_case = deviation, {"n": n, "basis": k, "perm": perm.p}
        # Integer inputs make every basis map exact.
        results.append(
            CheckResult(f"basis maps under S_{n}", worst, 1e-12, case=worst_case)
        )

    series = _series(8, seed)
    for variant, expect_violation, threshold in (
        (Variant.PENG, False, 1e-9),
        (Variant.PREMULT, True, 1e-3),
    ):
        params = ModelParams.initialize(
            ModelConfig.for_series(variant, series, hidden=6, seed=seed)
        )
        _randomize_fusion(params, rng, 0.3)
        with no_record():
            reference = forward(params, series, solver=RK4)
            worst, worst_case = 0.0, {}
            for _ in range(permutations):
                perm = Permutation.random(series.n, rng)
                moved = forward(params, series.permuted(perm.p), solver=RK4)
                expected = [permute_rows(perm, p.data) for p in reference]
                deviation = _max_abs(moved, expected)
                if deviation > worst:
                    worst, worst_case = deviation, {"perm": perm.p}
        results.append(
            CheckResult(
                f"{variant.value} forward under node permutations (n=8)",
                worst,
                threshold,
                expect_violation=expect_violation,
                case=worst_case,
            )
        )
    return results


def check_timewarp(
    seed: int = 0, strength: float = 0.5, steps: int = 256
) -> List[CheckResult]:
    """Solve in warped time on a uniform grid and in original time on its image."""
    rng = np.random.default_rng(seed)
    series = _series(6, seed, features=2)
    config = ModelConfig.for_series(Variant.PENG_FEATURES, series, hidden=4, seed=seed)
    params = ModelParams.initialize(config)
    _randomize_fusion(params, rng, 0.3)
    # Only the undifferentiated adjacency may enter the fusion.
    params.tensors["fusion.0.dA"].data[...] = 0.0

    controls = GraphControls.from_series(series)
    t0, t1 = controls.t0, controls.t1
    warp = MonotoneCubicWarp(t0, t1, strength)
    s_grid = np.linspace(t0, t1, steps + 1)
    t_grid = np.array([warp(s) for s in s_grid])
    t_grid[0], t_grid[-1] = t0, t1

    with no_record():
        z0 = init_state(params, controls, t0)
        original = rk4_solve(
            vector_field(params, controls), z0, t0, t1, save_times=t_grid, grid=t_grid
        )
        warped_controls = controls.warped(warp)
        warped = rk4_solve(
            vector_field(params, warped_controls),
            z0,
            t0,
            t1,
            save_times=s_grid,
            grid=s_grid,
        )
    deviation = _max_abs(warped.states, [z.data for z in original.states])
    return [
        CheckResult(
            "warped solve matches original at mapped times",
            deviation,
            1e-6,
            case={"strength": strength, "steps": steps},
        )
    ]


class GroupAveragedField:
    """(1/n!) sum_P P^T f(P Z; P A P^T) over all node permutations."""

    def __init__(self, params: ModelParams, series: DynamicGraphSeries) -> None:
        self.terms = []
        for perm in Permutation.all(series.n):
            controls = GraphControls.from_series(series.permuted(perm.p))
            self.terms.append((perm, PreMultField(params, controls)))

    def __call__(self, t: float, z: Tensor) -> Tensor:
        total = None
        for perm, field in self.terms:
            out = permute_rows(perm.inverse(), field(t, permute_rows(perm, z)))
            total = out if total is None else total + out
        assert total is not None
        return total / len(self.terms)


def check_projection(seed: int = 0, n: int = 4) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = [
        CheckResult(f"basis rank at n={n}", float(NUM_BASIS_MAPS - basis_rank(n)), 0.5)
    ]
    try:
        lsq_decompose(np.eye(9), 3)
        deficient = 0.0
    except RankDeficientBasisError as e:
        deficient = float(NUM_BASIS_MAPS - e.rank)
    results.append(
        CheckResult(
            "basis rank deficiency at n=3", deficient, 0.5, expect_violation=True
        )
    )

    m = rng.normal(size=(9, 9))
    perm = Permutation.random(3, rng)
    rho = conjugation_matrix(perm)
    moved = project_group_average(rho.T @ m @ rho, 3)
    drift = float(np.max(np.abs(moved - project_group_average(m, 3))))
    results.append(CheckResult("projection invariant under conjugation", drift, 1e-12))

    series = _series(n, seed)
    linear: Dict[str, Any] = dict(
        hidden=3, num_layers=1, activation="identity", layer_norm=False, seed=seed
    )
    premult = ModelParams.initialize(
        ModelConfig.for_series(Variant.PREMULT, series, **linear)
    )
    peng_config = ModelConfig.for_series(Variant.PENG, series, **linear)
    peng = ModelParams.initialize(peng_config)
    for name in ("init.graph", "gcn.0", "readout.weight", "readout.bias"):
        peng.tensors[name].data[...] = premult.tensors[name].data

    residual = 0.0
    eye = np.eye(n)
    for channel in ("A", "dA"):
        lifted = np.kron(premult.tensors[f"premult.{channel}"].data, eye)
        decomposition = lsq_decompose(project_group_average(lifted, n), n)
        residual = max(residual, decomposition.residual)
        peng.tensors[f"fusion.0.{channel}"].data[...] = decomposition.coefficients
    results.append(
        CheckResult("averaged Pre-Mult fusion lies in the basis span", residual, 1e-10)
    )

    controls = GraphControls.from_series(series)
    t0, t1 = controls.t0, controls.t1
    with no_record():
        z0 = init_state(peng, controls, t0)
        grid = np.linspace(t0, t1, 65)
        averaged = rk4_solve(
            GroupAveragedField(premult, series), z0, t0, t1, save_times=grid, grid=grid
        )
        projected = rk4_solve(
            vector_field(peng, controls), z0, t0, t1, save_times=grid, grid=grid
        )
    flow = _max_abs(averaged.states, [z.data for z in projected.states])
    results.append(CheckResult("averaged flow equals projected PENG flow", flow, 1e-10))
    return results


def check_gradients(seed: int = 0, n: int = 6, steps: int = 3) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    series = _series(n, seed, features=1)
    params = ModelParams.initialize(
        ModelConfig.for_series(Variant.PENG, series, hidden=4, seed=seed)
    )
    _randomize_fusion(params, rng, 0.1)
    controls = GraphControls.from_series(series)
    grid = np.linspace(controls.t0, controls.t1, steps + 1)
    targets = [rng.normal(size=(n, 1)) for _ in grid]
    solver = SolverConfig(method="rk4")

    def loss() -> Tensor:
        predictions = forward(
            params, controls, save_times=grid, solver=solver, grid=grid
        )
        terms = [
            (p - Tensor._wrap(y)).square().mean() for p, y in zip(predictions, targets)
        ]
        return add_n(terms) / len(terms)

    error = gradcheck(loss, params.parameters())
    return [
        CheckResult(
            f"PENG forward gradients vs finite differences (n={n}, {steps} RK4 steps)",
            error,
            1e-4,
        )
    ]


def check_solver_order(seed: int = 0) -> List[CheckResult]:
    z0 = Tensor._wrap(np.random.default_rng(seed).uniform(0.5, 1.5, size=(3, 2)))

    def decay(t: float, z: Tensor) -> Tensor:
        return -z

    with no_record():
        exact = z0.data * math.exp(-1.0)
        tsit5 = tsit5_solve(decay, z0, 0.0, 1.0, [1.0], rtol=1e-8, atol=1e-8)
        relative = float(np.max(np.abs(tsit5.states[-1].data - exact) / exact))

        errors = []
        for steps in (8, 16, 32):
            path = rk4_solve(decay, z0, 0.0, 1.0, num_steps=steps)
            errors.append(float(np.max(np.abs(path.states[-1].data - exact))))
    slopes = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    slope_gap = max(abs(s - 4.0) for s in slopes)
    return [
        CheckResult("tsit5 on dz/dt = -z at rtol = atol = 1e-8", relative, 1e-8),
        CheckResult(
            "rk4 convergence slope within 4 +- 0.2",
            slope_gap,
            0.2,
            case={"errors": errors, "slopes": slopes},
        ),
    ]


SUITES: Dict[str, Callable[..., List[CheckResult]]] = {
    "equivariance": check_equivariance,
    "timewarp": check_timewarp,
    "projection": check_projection,
    "gradients": check_gradients,
    "solver-order": check_solver_order,
}


def run_suite(name: str, seed: int = 0) -> List[CheckResult]:
    if name not in SUITES:
        raise InvalidParameterError(
            f"Unknown check {name!r}; expected one of {CHECK_SUITES}"
        )
    results = SUITES[name](seed=seed)
    for result in results:
        logger.info("check suite=%s %s", name, result.summary())
    return results


def failing(results: Sequence[CheckResult]) -> List[CheckResult]:
    return [r for r in results if not r.passed]
