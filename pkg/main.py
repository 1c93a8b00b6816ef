"""Command-line entry point: python main.py <command> [options]"""
import argparse
import importlib
import os
import sys
from typing import List, Optional

from utils.logger import set_console_level, setup_logger

logger = setup_logger(__name__)

COMMANDS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'commands')


def load_commands(subparsers) -> List[str]:
    """Register every commands/*.py module that provides setup(subparsers)"""
    loaded = []
    for filename in sorted(os.listdir(COMMANDS_DIR)):
        if filename.endswith('.py') and not filename.startswith('__'):
            module = importlib.import_module(f'commands.{filename[:-3]}')
            if hasattr(module, 'setup'):
                module.setup(subparsers)
                loaded.append(filename)
                logger.debug(f'Loaded command module: {filename}')
    return loaded


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='scma-lab',
        description='SCMA detection, learned decoders and codebook autoencoders',
    )
    parser.add_argument('-v', '--verbose', action='store_true', help='debug output on the console')
    parser.add_argument('-q', '--quiet', action='store_true', help='warnings and errors only')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    load_commands(subparsers)
    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the chosen command and return its exit status"""
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if getattr(args, 'handler', None) is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.verbose:
        set_console_level('DEBUG')
    elif args.quiet:
        set_console_level('WARNING')
    return args.handler(args)


if __name__ == '__main__':
    sys.exit(cli_dispatch())
