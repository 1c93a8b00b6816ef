import csv
import json
import math
import os
import secrets
from functools import wraps
from typing import Any, Iterable, List, Optional, Sequence

from utils.errors import ConfigError, ScmaLabError
from utils.logger import setup_logger

logger = setup_logger(__name__)


def command_guard(func):
    """Run a CLI command handler; log failures once and turn them into exit status 1"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            result = func(*args, **kwargs)
            return 0 if result is None else result
        except ScmaLabError as e:
            logger.error(f"{func.__name__} failed: {type(e).__name__}: {e}")
            return 1
        except (OSError, ValueError) as e:
            logger.error(f"{func.__name__} failed: {e}")
            return 1
        except Exception as e:
            logger.error(f"Unexpected error in {func.__name__}: {e}", exc_info=True)
            return 1
    return wrapper


def resolve_seed(seed: Optional[int]) -> int:
    """Return the given seed, or draw one from OS entropy and warn that the run is not pinned"""
    if seed is not None:
        return seed
    drawn = secrets.randbits(63)
    logger.warning(f"No --seed given; using {drawn}. Pass --seed {drawn} to reproduce this run")
    return drawn


def parse_grid(text: str) -> List[float]:
    """
    Parse an Eb/N0 grid

    Args:
        text: 'start:step:stop' (stop included when on the grid) or a comma
            separated list

    Returns:
        strictly increasing list of floats
    """
    try:
        if ':' in text:
            start, step, stop = (float(part) for part in text.split(':'))
            if step <= 0:
                raise ConfigError(f"grid step must be positive in {text!r}")
            # stop is included when it lies on the grid, never exceeded
            count = math.floor((stop - start) / step + 1e-9) + 1
            values = [round(start + i * step, 10) for i in range(count)]
        else:
            values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse grid {text!r}: {e}") from e

    if not values:
        raise ConfigError(f"grid {text!r} is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"grid {text!r} must be strictly increasing")
    return values


def parse_int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse integer list {text!r}") from e


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file with '\\n' line endings"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")


def write_json(path: str, document: Any) -> None:
    """Write JSON with sorted keys so equal documents give equal bytes"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote {path}")
