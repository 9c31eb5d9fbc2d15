import argparse
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Tuple

from peng_cde.commands.base import BaseCommand, CommandError
from peng_cde.trainer import (
    METRICS_HEADER,
    Dataset,
    confidence_interval,
    evaluate,
    extrapolation_growth,
    load_checkpoint,
    write_csv,
    write_per_snapshot,
)


class Command(BaseCommand):
    help = (
        "Evaluate checkpoints on a dataset: one metrics CSV row per checkpoint and "
        "split, a per-snapshot loss CSV per checkpoint, and a summary with 95% "
        "confidence intervals over seeds. "
        "Example: `peng-cde eval -c runs/peng-seed0.json --data data --out metrics.csv`"
    )
    uses_run_config = False

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "-c",
            "--checkpoint",
            nargs="+",
            type=str,
            required=True,
            help="Checkpoint files written by `train`.",
        )
        parser.add_argument(
            "-d",
            "--data",
            type=str,
            required=True,
            help="Directory holding the series files written by `gen`.",
        )
        parser.add_argument(
            "-o",
            "--out",
            type=str,
            required=True,
            help="Path of the metrics CSV. Example: metrics.csv",
        )
        parser.add_argument(
            "--role",
            choices=["val", "test"],
            default="test",
            help="Batch role to evaluate on. Default: test",
        )

    def handle(self, *args: Any, **options: Any) -> None:
        self.write_config(options)
        dataset = Dataset.from_dir(options["data"])
        batch = getattr(dataset, options["role"])
        if not batch:
            raise CommandError(f"No {options['role']} series in {options['data']}")

        out = Path(options["out"])
        rows: List[List[Any]] = []
        summary: Dict[Tuple[str, str], List[float]] = defaultdict(list)
        for path in options["checkpoint"]:
            checkpoint = load_checkpoint(path)
            variant = checkpoint.params.variant.value
            evaluation = evaluate(checkpoint.params, batch, checkpoint.solver)
            for key, value in evaluation.metrics.items():
                split = key.replace("_mse", "")
                rows.append(
                    [
                        checkpoint.seed,
                        variant,
                        checkpoint.meta.get("task", ""),
                        checkpoint.meta.get("graph_kind", ""),
                        split,
                        value,
                        checkpoint.training.get("epochs_run", ""),
                        checkpoint.training.get("wall_seconds", ""),
                    ]
                )
                summary[(variant, split)].append(value)
            if evaluation.per_snapshot:
                curve = out.with_name(
                    f"{out.stem}-{variant}-seed{checkpoint.seed}-per-snapshot.csv"
                )
                write_per_snapshot(curve, evaluation.per_snapshot)
                extrap = [r for r in evaluation.per_snapshot if r["split"] == "extrap"]
                if len(extrap) >= 2:
                    growth = extrapolation_growth(evaluation.per_snapshot)
                    summary[(variant, "extrap_growth")].append(growth)

        write_csv(out, METRICS_HEADER, rows)
        for (variant, split), values in sorted(summary.items()):
            mean, half_width = confidence_interval(values)
            self.write(
                f"{variant} {split}: {mean:.6g} ± {half_width:.3g} "
                f"(runs={len(values)})"
            )
