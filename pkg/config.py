import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from utils.errors import ConfigError

load_dotenv()

# Logging Configuration
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('SCMA_LOG_FILE', 'scma_lab.log')

# Paths
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.getenv('SCMA_DATA_DIR', os.path.join(BASE_DIR, 'data'))
OUTPUT_DIR = os.getenv('SCMA_OUTPUT_DIR', 'results')

DEFAULT_CODEBOOK = os.path.join(DATA_DIR, 'codebooks', 'scma_6x4x4.json')
DEFAULT_FACTOR_GRAPH = os.path.join(DATA_DIR, 'graphs', 'scma_6x4.txt')

# Simulation limits
MAP_ENUMERATION_LIMIT = int(os.getenv('SCMA_MAP_LIMIT', 1_000_000))
DEFAULT_WORKERS = int(os.getenv('SCMA_WORKERS', 1))


@dataclass
class RunConfig:
    """Contents of a --config document"""
    system: Dict[str, Any] = field(default_factory=dict)
    codebook: Optional[str] = None
    factor_graph: Optional[str] = None
    gains: Optional[str] = None
    detector: Dict[str, Any] = field(default_factory=dict)


def load_run_config(path: Optional[str]) -> RunConfig:
    """
    Load a run configuration document

    Relative file references inside the document are resolved against the
    document's own directory.

    Args:
        path: JSON file location, or None for an empty configuration

    Returns:
        RunConfig
    """
    if path is None:
        return RunConfig()

    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f'Cannot read run config {path}: {e}') from e

    if not isinstance(document, dict):
        raise ConfigError(f'Run config {path} must be a JSON object')

    unknown = set(document) - {'system', 'codebook', 'factor_graph', 'gains', 'detector'}
    if unknown:
        raise ConfigError(f'Unknown run config keys: {sorted(unknown)}')

    base = os.path.dirname(os.path.abspath(path))

    def resolve(value):
        if value is None or os.path.isabs(value):
            return value
        return os.path.join(base, value)

    system = document.get('system', {})
    detector = document.get('detector', {})
    if not isinstance(system, dict) or not isinstance(detector, dict):
        raise ConfigError('"system" and "detector" must be JSON objects')

    return RunConfig(
        system=system,
        codebook=resolve(document.get('codebook')),
        factor_graph=resolve(document.get('factor_graph')),
        gains=resolve(document.get('gains')),
        detector=detector,
    )
