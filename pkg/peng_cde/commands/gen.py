import argparse
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from peng_cde.commands.base import BaseCommand, CommandError, add_task_arguments
from peng_cde.config import RunConfig
from peng_cde.constants import SIR_REGIMES, SPLIT_ROLES
from peng_cde.dynamics import make_task_series
from peng_cde.graphgen import save_series


def series_seed(base: int, role: str, index: int, regime: Optional[str] = None) -> int:
    entropy = [base, SPLIT_ROLES.index(role), index]
    if regime:
        entropy.append(sorted(SIR_REGIMES).index(regime) + 1)
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def file_name(run: RunConfig, role: str, index: int, regime: Optional[str]) -> str:
    parts = [run.task, run.graph_kind, role]
    if regime:
        parts.append(regime)
    return "-".join(parts) + f"-{index:02d}.json"


class Command(BaseCommand):
    help = (
        "Generate dynamic graph series with simulated node dynamics: "
        "one JSON file per series and batch role (train, val, test). "
        "Example: `peng-cde gen --task heat --graph community --seeds 4 --out data`"
    )

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_task_arguments(parser)
        parser.add_argument(
            "-o",
            "--out",
            dest="data_dir",
            type=str,
            required=True,
            help="Directory to write the series files to.",
        )
        parser.add_argument(
            "--seed",
            type=int,
            help="Base seed of the run. Default: 0",
        )
        parser.add_argument(
            "--seeds",
            type=int,
            help=(
                "Series per batch role (per regime for sir). "
                "Default: the preset batch size"
            ),
        )
        parser.add_argument("--n", type=int, help="Node count.")
        parser.add_argument("--num-times", type=int, help="Snapshots per series.")
        parser.add_argument("--num-changes", type=int, help="Topology change events.")
        parser.add_argument("--t-end", type=float, help="Length of the time range.")
        parser.add_argument(
            "--flip-rate",
            type=float,
            help="Probability that a node pair flips at each change event.",
        )
        parser.add_argument(
            "--gamma-shape",
            type=float,
            help="Sample time stamps from a Gamma-driven process of this shape.",
        )
        parser.add_argument(
            "--regime",
            choices=sorted(SIR_REGIMES),
            help="Only generate this sir regime. Default: both",
        )

    def jobs(
        self, run: RunConfig, count: int, regime: Optional[str]
    ) -> List[Tuple[str, int, Optional[str]]]:
        if run.task != "sir":
            return [(role, i, None) for role in SPLIT_ROLES for i in range(count)]
        regimes: Sequence[str] = [regime] if regime else sorted(SIR_REGIMES)
        return [
            (role, i, name)
            for role in SPLIT_ROLES
            for name in regimes
            for i in range(count)
        ]

    def handle(self, *args: Any, **options: Any) -> None:
        seeds = options.pop("seeds")
        run = self.resolve(options)
        gamma_shape = run.settings.get("gamma_shape")
        regime = run.settings.get("regime")
        if seeds is None:
            seeds = run.get("sir_trajectories" if run.task == "sir" else "batch")
        if seeds < 1:
            raise CommandError("--seeds must be >= 1")

        out = Path(run.data_dir or ".")
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CommandError(f"Could not create {out}: {e}")

        graph = run.graph_config()
        base = run.seeds[0]
        written = 0
        for role, index, name in self.jobs(run, seeds, regime):
            series = make_task_series(
                run.task,
                graph.kind,
                graph.n,
                graph.t_end,
                graph.num_times,
                graph.num_changes,
                seed=series_seed(base, role, index, name),
                regime=name,
                gamma_shape=gamma_shape,
                flip_rate=graph.flip_rate,
                graph_params=graph.params or None,
            )
            series.meta["role"] = role
            path = out / file_name(run, role, index, name)
            try:
                save_series(series, path)
            except OSError as e:
                raise CommandError(f"Could not write {path}: {e}")
            written += 1
        self.write(f"Wrote {written} series to {out}")
