import abc
import argparse
import json
import logging
import sys
from typing import Any, Dict, Optional, Sequence, TextIO

from peng_cde.config import RunConfig, resolve_run_config
from peng_cde.constants import (
    EXIT_NUMERICAL,
    EXIT_USAGE,
    GRAPH_KINDS,
    SCALE_PRESETS,
    TASKS,
)
from peng_cde.errors import (
    NonFiniteError,
    PengCdeError,
    SolverError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

NUMERICAL_ERRORS = (NonFiniteError, SolverError, TrainingDivergedError)

class CommandError(Exception):
    """Raised by a command to stop with a message and a process exit code."""

    def __init__(self, message: str, exit_code: int = EXIT_USAGE) -> None:
        super().__init__(message)
        self.exit_code = exit_code


class CommandParser(argparse.ArgumentParser):
    """Argument parser that raises :class:`CommandError` outside the shell."""

    def __init__(
        self, *, called_from_command_line: bool = False, **kwargs: Any
    ) -> None:
        self.called_from_command_line = called_from_command_line
        super().__init__(**kwargs)

    def error(self, message: str) -> None:  # type: ignore[override]
        if self.called_from_command_line:
            super().error(message)
        raise CommandError(f"Error: {message}")


class BaseCommand(abc.ABC):
    help = ""
    # Commands that build a RunConfig print it before doing any work.
    uses_run_config = True

    def __init__(self, name: str, stdout: Optional[TextIO] = None) -> None:
        self.name = name
        self._stdout = stdout

    @property
    def stdout(self) -> TextIO:
        return self._stdout or sys.stdout

    def write(self, line: str = "") -> None:
        self.stdout.write(line + "\n")

    def create_parser(
        self, prog_name: str, called_from_command_line: bool = False
    ) -> CommandParser:
        parser = CommandParser(
            prog=f"{prog_name} {self.name}",
            description=self.help or None,
            called_from_command_line=called_from_command_line,
        )
        parser.add_argument(
            "-v",
            "--verbosity",
            type=int,
            choices=[0, 1, 2, 3],
            default=1,
            help="Verbosity level; 0=warnings only, 1=normal, 2 and 3=debug output",
        )
        if self.uses_run_config:
            parser.add_argument(
                "--config",
                type=str,
                help="Path to a JSON config file. Flags override its values.",
            )
            parser.add_argument(
                "--scale",
                choices=sorted(SCALE_PRESETS),
                help="Preset for sizes and training settings. Default: desk",
            )
        self.add_arguments(parser)
        return parser

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Entry point for subclassed commands to add custom arguments."""

    def write_config(self, options: Dict[str, Any]) -> None:
        """Print the options of a command that does not take a run config."""
        shown = {k: v for k, v in options.items() if k != "verbosity"}
        shown["command"] = self.name
        self.write(json.dumps(shown, indent=2, sort_keys=True))

    def resolve(
        self, options: Dict[str, Any], exclude: Sequence[str] = ()
    ) -> RunConfig:
        """Resolve and print the run configuration for provenance."""
        skip = {"verbosity", *exclude}
        run = resolve_run_config(
            self.name, {k: v for k, v in options.items() if k not in skip}
        )
        self.write(run.dumps())
        return run

    def execute(self, *args: Any, **options: Any) -> None:
        logger.debug(
            "command=%s options=%s", self.name, json.dumps(options, default=str)
        )
        try:
            self.handle(*args, **options)
        except NUMERICAL_ERRORS as e:
            raise CommandError(str(e), exit_code=EXIT_NUMERICAL) from e
        except PengCdeError as e:
            raise CommandError(str(e), exit_code=EXIT_USAGE) from e

    @abc.abstractmethod
    def handle(self, *args: Any, **options: Any) -> None:
        """The actual logic of the command."""


def add_task_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--task",
        choices=TASKS,
        help="Node dynamics generating the data. Default: heat",
    )
    parser.add_argument(
        "--graph",
        dest="graph_kind",
        choices=GRAPH_KINDS,
        help="Initial graph distribution. Default: community",
    )


LOG_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG, 3: logging.DEBUG}


def configure_logging(verbosity: int) -> None:
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s %(message)s"))
    root = logging.getLogger("peng_cde")
    root.handlers[:] = [handler]
    root.setLevel(LOG_LEVELS.get(verbosity, logging.DEBUG))

