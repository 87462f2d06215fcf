"""Binary weight container.

Layout (all integers little-endian)::

    b"ECSW" | uint32 version | uint32 n | n bytes of UTF-8 JSON ModelConfig
    | float64 arrays, row-major, in the order of ``model.weight_shapes``
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import WeightError
from .model import ModelConfig, WeightSet, init_weights, weight_shapes, weights_from_arrays

MAGIC = b"ECSW"
VERSION = 1
_LE_F64 = np.dtype("<f8")


def save_weights(path: str | Path, config: ModelConfig, weights: WeightSet) -> None:
    weights.validate(config)
    header = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for _, arr in weights.arrays():
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes(order="C"))


def load_weights(path: str | Path) -> tuple[ModelConfig, WeightSet]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise WeightError(f"{path}: cannot read weight file ({exc})") from exc
    if blob[:4] != MAGIC:
        raise WeightError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise WeightError(f"{path}: truncated header")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise WeightError(f"{path}: unsupported version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(blob[12 : 12 + header_len].decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise WeightError(f"{path}: invalid config header ({exc})") from exc
    offset = 12 + header_len
    arrays = {}
    for name, shape in weight_shapes(config):
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise WeightError(f"{path}: truncated while reading {name}")
        arrays[name] = np.frombuffer(blob, dtype=_LE_F64, count=count, offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise WeightError(f"{path}: {len(blob) - offset} trailing bytes")
    try:
        weights = weights_from_arrays(config, arrays)
    except WeightError as exc:
        raise WeightError(f"{path}: {exc}") from exc
    return config, weights


def generate_weight_file(path: str | Path, seed: int, config: ModelConfig | None = None) -> ModelConfig:
    config = config or ModelConfig()
    save_weights(path, config, init_weights(config, seed))
    return config
