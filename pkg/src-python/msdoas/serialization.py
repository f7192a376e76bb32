# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Ion encoding of model tensors, run configurations and provenance manifests."""

import os
import platform
from collections.abc import Mapping
from datetime import datetime, timezone
from decimal import Decimal
from typing import Sequence

import amazon.ion.simpleion as ion
import numpy as np
from amazon.ion.core import IonType
from amazon.ion.simple_types import is_null
from amazon.ion.symbols import SymbolToken
from loguru import logger

from msdoas.exceptions import ModelFormatError

MANIFEST_SUFFIX = '.manifest.ion'
_TENSOR_DTYPE = '<f8'


def to_plain(value):
    """Converts a loaded Ion value into plain Python containers and scalars.

    Ion decimals become floats and symbols become their text, so ``{separation: 5.0}`` and
    ``{kind: III}`` read naturally from hand-written files.
    """
    if value is None or is_null(value):
        return None
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if getattr(value, 'ion_type', None) is IonType.BOOL or isinstance(value, bool):
        return bool(value)
    if isinstance(value, SymbolToken):
        return value.text
    if isinstance(value, (Decimal, float)):
        return float(value)
    if isinstance(value, int):
        return int(value)
    if isinstance(value, str):
        return str(value)
    if isinstance(value, bytes):
        return bytes(value)
    return value


def to_ion_safe(value):
    """Converts numpy scalars, enums and named tuples into values the Ion writer accepts."""
    if hasattr(value, '_asdict'):
        return to_ion_safe(value._asdict())
    if isinstance(value, Mapping):
        return {str(k): to_ion_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_ion_safe(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def load_ion_text(source):
    """Loads a single Ion value from a file path, or parses ``source`` itself as Ion text."""
    if os.path.exists(source):
        with open(source, 'rb') as fp:
            return to_plain(ion.load(fp))
    return to_plain(ion.loads(source))


def encode_tensor(name: str, array: np.ndarray) -> dict:
    """An Ion struct holding a float64 tensor as a little-endian blob."""
    data = np.ascontiguousarray(array, dtype=_TENSOR_DTYPE)
    return {'name': name, 'shape': [int(d) for d in data.shape], 'data': data.tobytes()}


def decode_tensor(value, name: str, shape: Sequence[int]) -> np.ndarray:
    """Decodes a tensor struct, checking its name and shape.

    Raises:
        ModelFormatError: If the name or shape is not the expected one.
    """
    value = to_plain(value)
    if value.get('name') != name:
        raise ModelFormatError(f'Expected tensor {name!r}, found {value.get("name")!r}')
    stored_shape = tuple(value.get('shape') or ())
    if stored_shape != tuple(shape):
        raise ModelFormatError(f'Tensor {name!r} has shape {stored_shape}, expected {tuple(shape)}')
    data = value.get('data') or b''
    if len(data) != int(np.prod(shape)) * 8:
        raise ModelFormatError(f'Tensor {name!r} holds {len(data)} bytes, expected {int(np.prod(shape)) * 8}')
    return np.frombuffer(data, dtype=_TENSOR_DTYPE).astype(np.float64).reshape(shape)


def dump_ion(obj, path, binary=True):
    with open(path, 'wb') as fp:
        ion.dump(obj, fp, binary=binary)


def load_ion(path):
    with open(path, 'rb') as fp:
        return ion.load(fp)


def manifest_path(output_path) -> str:
    return f'{output_path}{MANIFEST_SUFFIX}'


def _versions():
    import scipy
    from msdoas import __version__
    return {'msdoas': __version__, 'numpy': np.__version__, 'scipy': scipy.__version__,
            'python': platform.python_version()}


def write_manifest(output_path, subcommand: str, inputs: Sequence[str], outputs: Sequence[str], seed=None,
                   parameters: dict = None) -> str:
    """Writes the provenance sidecar of ``output_path`` as Ion text and returns its path."""
    manifest = {
        'subcommand': subcommand,
        'inputs': [str(p) for p in inputs],
        'outputs': [str(p) for p in outputs],
        'seed': seed,
        'parameters': to_ion_safe(parameters or {}),
        'versions': _versions(),
        'created': datetime.now(timezone.utc).isoformat(),
    }
    path = manifest_path(output_path)
    dump_ion(manifest, path, binary=False)
    logger.debug('Wrote manifest {}', path)
    return path
