import sys
from typing import Dict, List, Optional, TextIO, Type

from peng_cde.commands import ablate, bench, check, evaluate, gen, train
from peng_cde.commands.base import BaseCommand, CommandError, configure_logging
from peng_cde.constants import EXIT_OK, EXIT_USAGE

COMMANDS: Dict[str, Type[BaseCommand]] = {
    "gen": gen.Command,
    "train": train.Command,
    "eval": evaluate.Command,
    "check": check.Command,
    "ablate": ablate.Command,
    "bench": bench.Command,
}


def get_command(name: str, stdout: Optional[TextIO] = None) -> BaseCommand:
    try:
        command_class = COMMANDS[name]
    except KeyError:
        raise CommandError(
            f"Unknown command {name!r}; expected one of {', '.join(COMMANDS)}"
        ) from None
    return command_class(name, stdout=stdout)


def call_command(name: str, *args: str, stdout: Optional[TextIO] = None) -> None:
    """Run a command in-process with command-line style arguments."""
    command = get_command(name, stdout=stdout)
    parser = command.create_parser("peng-cde")
    options = vars(parser.parse_args(list(args)))
    command.execute(**options)


def run_from_argv(argv: List[str]) -> None:
    """``argv`` is ``[prog, command, *args]``."""
    command = get_command(argv[1])
    parser = command.create_parser(argv[0], called_from_command_line=True)
    options = vars(parser.parse_args(argv[2:]))
    configure_logging(options["verbosity"])
    command.execute(**options)


def usage(prog: str) -> str:
    return f"usage: {prog} {{{','.join(COMMANDS)}}} [options]\n"


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv if argv is None else argv)
    prog = "peng-cde"
    if len(argv) < 2 or argv[1] in ("-h", "--help"):
        sys.stdout.write(usage(prog))
        return EXIT_OK if len(argv) >= 2 else EXIT_USAGE
    try:
        run_from_argv([prog, *argv[1:]])
    except CommandError as e:
        sys.stderr.write(f"{e}\n")
        return e.exit_code
    except SystemExit as e:
        # argparse exits with 2 on usage errors and 0 after --help.
        return int(e.code or 0)
    return EXIT_OK
