import argparse
from typing import Any

from peng_cde.bench import BENCH_HEADER, BENCH_SIZES, run_bench
from peng_cde.commands.base import BaseCommand, CommandError
from peng_cde.trainer import write_csv


class Command(BaseCommand):
    help = (
        "Time one training epoch of the peng and premult models at growing node "
        "counts and report their fusion parameter counts. "
        "Example: `peng-cde bench --sizes 128 256 512`"
    )
    uses_run_config = False

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "--sizes",
            nargs="+",
            type=int,
            default=list(BENCH_SIZES),
            help="Node counts to time. Default: 128 256 512",
        )
        parser.add_argument("--repeats", type=int, default=1)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("-o", "--out", type=str, help="Optional CSV path.")

    def handle(self, *args: Any, **options: Any) -> None:
        self.write_config(options)
        if min(options["sizes"]) < 2 or options["repeats"] < 1:
            raise CommandError("sizes must be >= 2 and repeats >= 1")
        rows = run_bench(options["sizes"], options["seed"], options["repeats"])
        for row in rows:
            self.write(
                f"{row.variant:<8} n={row.n:<5} {row.seconds_per_epoch:.4f}s/epoch "
                f"x{row.relative:.2f} fusion_params={row.fusion_parameters}"
            )
        if options["out"]:
            write_csv(options["out"], BENCH_HEADER, (row.as_row() for row in rows))
