"""
Command modules

Every module in this package that defines setup(subparsers) is registered by
main.py at start-up. The helpers below are shared by the command modules.
"""

import argparse
import os
from dataclasses import dataclass
from typing import Optional

from config import DEFAULT_CODEBOOK, DEFAULT_FACTOR_GRAPH, OUTPUT_DIR, RunConfig, load_run_config
from utils.helpers import ensure_dir, resolve_seed
from utils.logger import setup_logger
from utils.scma_model import (
    ChannelGain,
    Codebook,
    SystemConfig,
    load_codebook,
    load_factor_graph,
    load_gains,
)

logger = setup_logger(__name__)


def add_common_arguments(parser: argparse.ArgumentParser, system: bool = True) -> None:
    """--seed, --config and --out for every subcommand; codebook/graph/gain overrides optionally"""
    parser.add_argument('--seed', type=int, default=None, help='random seed (required for reproducible output)')
    parser.add_argument('--config', default=None, help='run configuration JSON')
    parser.add_argument('--out', default=None, help=f'output directory (default: {OUTPUT_DIR})')
    if system:
        parser.add_argument('--codebook', default=None, help='codebook JSON file')
        parser.add_argument('--factor-graph', default=None, help='K x J factor graph text file')
        parser.add_argument('--gains', default=None, help='text file with 2K channel gains')


@dataclass
class SystemContext:
    config: SystemConfig
    codebook: Codebook
    gains: ChannelGain
    run: RunConfig
    seed: int
    out: str


def load_system(args: argparse.Namespace) -> SystemContext:
    """Resolve the system from CLI flags, then the --config document, then the shipped defaults"""
    run = load_run_config(args.config)
    codebook_path = getattr(args, 'codebook', None) or run.codebook or DEFAULT_CODEBOOK
    graph_path = getattr(args, 'factor_graph', None) or run.factor_graph
    if graph_path is None and codebook_path == DEFAULT_CODEBOOK:
        graph_path = DEFAULT_FACTOR_GRAPH

    expected = SystemConfig.from_dict(run.system) if run.system else None
    graph = load_factor_graph(graph_path) if graph_path else None
    codebook = load_codebook(codebook_path, expected, graph)
    if graph is not None:
        graph.check_against(codebook.config)
    gains = load_gains(getattr(args, 'gains', None) or run.gains, codebook.config.resources)

    cfg = codebook.config
    logger.info(f'System J={cfg.users} K={cfg.resources} M={cfg.codebook_size} N={cfg.nonzero_per_codeword} '
                f'({cfg.mode}), d_f={cfg.overlap_degree:g}, overload={cfg.overload:.0%}')
    return SystemContext(config=cfg, codebook=codebook, gains=gains, run=run,
                         seed=resolve_seed(args.seed), out=output_dir(args))


def output_dir(args: argparse.Namespace) -> str:
    return ensure_dir(args.out or OUTPUT_DIR)


def out_path(args_or_ctx, name: str) -> str:
    directory = args_or_ctx.out if isinstance(args_or_ctx, SystemContext) else output_dir(args_or_ctx)
    return os.path.join(directory, name)


def default_detector(run: RunConfig, given: Optional[str]) -> str:
    if given:
        return given
    if 'spec' in run.detector:
        return str(run.detector['spec'])
    return f'logmpa:{int(run.detector.get("iterations", 5))}'
