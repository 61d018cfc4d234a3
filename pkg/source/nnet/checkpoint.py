"""TASECKPT container: named float32 tensors.

Layout (little-endian): b"TASECKPT", u32 version, u32 record count, then per
record u16 name length, utf-8 name, u32 ndim, ndim x u32 dims, float32 payload.
"""
import logging
import os
import struct
from typing import Dict

import numpy as np

from errors import CheckpointFormatError

MAGIC = b"TASECKPT"
FORMAT_VERSION = 1


def encode_checkpoint(tensors: Dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack('<II', FORMAT_VERSION, len(tensors))]
    for name, value in tensors.items():
        encoded = name.encode('utf-8')
        value = np.asarray(value, dtype='<f4')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f'<I{value.ndim}I', value.ndim, *value.shape))
        chunks.append(value.tobytes(order='C'))
    return b''.join(chunks)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("Not a TASECKPT checkpoint (bad magic).")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from('<II', data, offset)
        offset += 8
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version}.")
        tensors = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from('<H', data, offset)
            offset += 2
            name = data[offset:offset + name_length].decode('utf-8')
            offset += name_length
            (ndim,) = struct.unpack_from('<I', data, offset)
            offset += 4
            shape = struct.unpack_from(f'<{ndim}I', data, offset)
            offset += 4 * ndim
            n_values = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * n_values > len(data):
                raise CheckpointFormatError(f"Tensor {name} is truncated.")
            tensors[name] = np.frombuffer(data, dtype='<f4', count=n_values, offset=offset).reshape(shape).copy()
            offset += 4 * n_values
    except struct.error as e:
        raise CheckpointFormatError(f"Truncated checkpoint: {e}") from e
    if offset != len(data):
        raise CheckpointFormatError(f"{len(data) - offset} trailing bytes after the last record.")
    return tensors


def save_checkpoint(tensors: Dict[str, np.ndarray], filename: str) -> None:
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filename, 'wb') as file:
        file.write(encode_checkpoint(tensors))
    logging.info(f"Saved {len(tensors)} tensors to {filename}")


def load_checkpoint(filename: str) -> Dict[str, np.ndarray]:
    with open(filename, 'rb') as file:
        return decode_checkpoint(file.read())
