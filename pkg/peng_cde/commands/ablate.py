import argparse
from typing import Any

from peng_cde.commands.base import BaseCommand
from peng_cde.trainer import ablate_fusion, load_checkpoint, write_ablation


class Command(BaseCommand):
    help = (
        "Write the learned fusion weights of a peng checkpoint: one row per basis "
        "operation, fusion layer and channel (A or dA). "
        "Example: `peng-cde ablate -c runs/peng-seed0.json --out ablation.csv`"
    )
    uses_run_config = False

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "-c",
            "--checkpoint",
            type=str,
            required=True,
            help="Checkpoint of a peng or peng-features model.",
        )
        parser.add_argument(
            "-o",
            "--out",
            type=str,
            help="Path of the CSV. Without it the table is printed.",
        )

    def handle(self, *args: Any, **options: Any) -> None:
        self.write_config(options)
        rows = ablate_fusion(load_checkpoint(options["checkpoint"]).params)
        if options["out"]:
            write_ablation(options["out"], rows)
            self.write(f"Wrote {len(rows)} rows to {options['out']}")
            return
        for row in rows:
            mark = "*" if row.bold else " "
            self.write(
                f"{row.operation:<28} layer={row.layer} {row.channel:<2} "
                f"{row.weight:>9.4f}{mark}"
            )
