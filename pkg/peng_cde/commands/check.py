import argparse
import json
from typing import Any, List

from peng_cde.checks import CheckResult, failing, run_suite
from peng_cde.commands.base import BaseCommand, CommandError
from peng_cde.constants import CHECK_SUITES, EXIT_CHECK_FAILED


class Command(BaseCommand):
    help = (
        "Run self-contained property suites with fixed seeds and report the largest "
        "deviation of each check against its threshold. "
        "Example: `peng-cde check equivariance`"
    )
    uses_run_config = False

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument(
            "suites",
            nargs="*",
            choices=CHECK_SUITES + ["all"],
            default=["all"],
            help=f"Suites to run. Options: {', '.join(CHECK_SUITES)}, all",
        )
        parser.add_argument(
            "--seed",
            type=int,
            default=0,
            help="Seed of the randomized inputs. Default: 0",
        )

    def handle(self, *args: Any, **options: Any) -> None:
        self.write_config(options)
        names = CHECK_SUITES if "all" in options["suites"] else options["suites"]
        results: List[CheckResult] = []
        for name in names:
            suite = run_suite(name, options["seed"])
            for result in suite:
                self.write(f"[{name}] {result.summary()}")
            results.extend(suite)

        failed = failing(results)
        if failed:
            for result in failed:
                case = {
                    "name": result.name,
                    "deviation": result.deviation,
                    "threshold": result.threshold,
                    "case": result.case,
                }
                self.write(json.dumps(case, sort_keys=True, default=str))
            raise CommandError(
                f"{len(failed)} of {len(results)} checks failed",
                exit_code=EXIT_CHECK_FAILED,
            )
        self.write(f"All {len(results)} checks passed")
