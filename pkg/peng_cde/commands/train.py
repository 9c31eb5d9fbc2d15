import argparse
import concurrent.futures
from pathlib import Path
from typing import Any, List

from peng_cde.commands.base import BaseCommand, CommandError, add_task_arguments
from peng_cde.config import RunConfig
from peng_cde.constants import EXIT_NUMERICAL
from peng_cde.errors import TrainingDivergedError
from peng_cde.model import VARIANT_NAMES, ModelParams
from peng_cde.trainer import (
    Checkpoint,
    Dataset,
    TrainResult,
    save_checkpoint,
    train,
    write_history,
)


def checkpoint_name(variant: str, seed: int) -> str:
    return f"{variant}-seed{seed}.json"


class Command(BaseCommand):
    help = (
        "Train one model per seed on a generated dataset and write a checkpoint "
        "plus a per-epoch history CSV for each. "
        "Example: `peng-cde train --data data --variant peng --seeds 4 --out runs`"
    )

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        add_task_arguments(parser)
        parser.add_argument(
            "-d",
            "--data",
            dest="data_dir",
            type=str,
            required=True,
            help="Directory holding the series files written by `gen`.",
        )
        parser.add_argument(
            "-o",
            "--out",
            dest="output",
            type=str,
            required=True,
            help="Directory for checkpoints and history files.",
        )
        parser.add_argument(
            "--variant",
            type=str,
            help=f"Model variant. Options: {', '.join(VARIANT_NAMES)}. Default: peng",
        )
        parser.add_argument("--seed", type=int, help="First seed. Default: 0")
        parser.add_argument(
            "--seeds",
            type=int,
            help="Number of seeds, trained in parallel threads. Default: 1",
        )
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--learning-rate", type=float)
        parser.add_argument("--weight-decay", type=float)
        parser.add_argument("--patience", type=int)
        parser.add_argument("--min-epochs", type=int)
        parser.add_argument("--hidden", type=int, help="Latent width d_z.")
        parser.add_argument("--num-layers", type=int, help="Graph convolutions.")
        parser.add_argument(
            "--solver",
            choices=["tsit5", "rk4"],
            help="ODE solver. Default: tsit5",
        )
        parser.add_argument("--rtol", type=float)
        parser.add_argument("--atol", type=float)
        parser.add_argument("--num-steps", type=int, help="Steps for the rk4 solver.")
        parser.add_argument(
            "--per-layer-fusion",
            action="store_true",
            default=None,
            help="Learn one pair of fusion weights per graph convolution.",
        )
        parser.add_argument(
            "--coupled-weight-decay",
            dest="decoupled",
            action="store_false",
            default=None,
            help="Add weight decay to the gradient instead of decaying weights.",
        )

    def train_seed(self, run: RunConfig, dataset: Dataset, seed: int) -> TrainResult:
        config = run.train_config(seed)
        params = ModelParams.initialize(run.model_config(dataset.train[0], seed))
        try:
            result = train(params, dataset, config)
        except TrainingDivergedError as e:
            self.write_run(run, seed, e.params, e.history, 0.0)
            raise CommandError(f"seed {seed}: {e}", exit_code=EXIT_NUMERICAL)
        self.write_run(run, seed, result.params, result.history, result.wall_seconds)
        return result

    def write_run(
        self,
        run: RunConfig,
        seed: int,
        params: ModelParams,
        history: List[Any],
        wall_seconds: float,
    ) -> None:
        out = Path(run.output or ".")
        stem = checkpoint_name(run.variant, seed)
        training = {"epochs_run": len(history), "wall_seconds": wall_seconds}
        meta = {"task": run.task, "graph_kind": run.graph_kind, "data": run.data_dir}
        save_checkpoint(
            out / stem,
            Checkpoint(params, run.solver_config(), seed, training=training, meta=meta),
        )
        write_history(out / stem.replace(".json", "-history.csv"), history)

    def handle(self, *args: Any, **options: Any) -> None:
        dataset = Dataset.from_dir(options["data_dir"])
        if options["task"] is None:
            options["task"] = dataset.train[0].meta.get("task")
        if options["graph_kind"] is None:
            options["graph_kind"] = dataset.train[0].meta.get("kind")
        run = self.resolve(options)
        Path(run.output or ".").mkdir(parents=True, exist_ok=True)

        with concurrent.futures.ThreadPoolExecutor(max_workers=len(run.seeds)) as pool:
            futures = [
                pool.submit(self.train_seed, run, dataset, seed) for seed in run.seeds
            ]
            # Seed order, whatever order the threads finish in.
            results = [future.result() for future in futures]

        for seed, result in zip(run.seeds, results):
            last = result.history[-1]
            self.write(
                f"seed={seed} epochs={result.epochs_run} "
                f"best_epoch={result.best_epoch} "
                f"train={last['train']:.6g} interp_val={last['interp_val']:.6g}"
            )
