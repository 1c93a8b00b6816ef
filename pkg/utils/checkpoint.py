"""
Model checkpoint container

Layout (little-endian):
    8 bytes   magic b'SCMACKPT'
    uint32    format version
    uint64    header length in bytes
    header    UTF-8 JSON, sorted keys: {"meta": ..., "sections": {name: {"layers": [...],
              "arrays": [{"name", "shape", "offset"}]}}}
    payload   raw float64 arrays back to back, offsets relative to payload start

Identical networks and metadata always produce identical bytes.
"""

import json
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from utils.errors import CheckpointError
from utils.logger import setup_logger
from utils.neuro import Network

logger = setup_logger(__name__)

MAGIC = b'SCMACKPT'
VERSION = 1
_PREFIX = struct.Struct('<8sIQ')


def encode_checkpoint(sections: Dict[str, Network], meta: Dict[str, Any]) -> bytes:
    header = {'meta': meta, 'sections': {}}
    blobs = []
    offset = 0
    for name in sorted(sections):
        net = sections[name]
        entries = []
        for array_name, array in net.named_arrays():
            data = np.ascontiguousarray(array, dtype='<f8').tobytes()
            entries.append({'name': array_name, 'shape': list(array.shape), 'offset': offset})
            blobs.append(data)
            offset += len(data)
        header['sections'][name] = {'layers': net.describe(), 'arrays': entries}

    try:
        header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')
    except (TypeError, ValueError) as e:
        raise CheckpointError(f'checkpoint metadata is not JSON serializable: {e}') from e
    return _PREFIX.pack(MAGIC, VERSION, len(header_bytes)) + header_bytes + b''.join(blobs)


def decode_checkpoint(raw: bytes) -> Tuple[Dict[str, Network], Dict[str, Any]]:
    if len(raw) < _PREFIX.size:
        raise CheckpointError('checkpoint is truncated')
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError('not a checkpoint file (bad magic)')
    if version != VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version}')
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise CheckpointError('checkpoint header is truncated')
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'corrupt checkpoint header: {e}') from e

    payload = memoryview(raw)[start + header_len:]
    sections = {}
    try:
        for name, section in header['sections'].items():
            arrays = {}
            for entry in section['arrays']:
                shape = tuple(entry['shape'])
                count = int(np.prod(shape)) if shape else 1
                end = entry['offset'] + 8 * count
                if end > len(payload):
                    raise CheckpointError(f'array {name}/{entry["name"]} runs past the end of the file')
                arrays[entry['name']] = np.frombuffer(
                    payload[entry['offset']:end], dtype='<f8').astype(np.float64).reshape(shape)
            sections[name] = Network.from_description(section['layers'], arrays)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'corrupt checkpoint section: {e}') from e
    return sections, header.get('meta', {})


def save_checkpoint(path: str, sections: Dict[str, Network], meta: Dict[str, Any]) -> None:
    """
    Write networks and metadata to one checkpoint file

    Args:
        path: destination file
        sections: networks keyed by section name (e.g. 'decoder', 'encoder.0')
        meta: JSON-serializable provenance
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(encode_checkpoint(sections, meta))
    logger.info(f'Checkpoint written to {path} ({", ".join(sorted(sections))})')


def load_checkpoint(path: str) -> Tuple[Dict[str, Network], Dict[str, Any]]:
    """Read a checkpoint written by save_checkpoint"""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f'Cannot read checkpoint {path}: {e}') from e
    return decode_checkpoint(raw)
