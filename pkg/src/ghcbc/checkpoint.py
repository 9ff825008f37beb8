"""Single-file checkpoint format.

Layout: one JSON header line holding a format-version integer and the
manifest of (name, shape) pairs, then the raw little-endian float64
payloads concatenated in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .tensor import Tensor

FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor | np.ndarray]) -> None:
    path = Path(path)
    manifest = [[name, list(_data(p).shape)] for name, p in params.items()]
    header = json.dumps({"format_version": FORMAT_VERSION, "params": manifest})
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        for _, p in params.items():
            f.write(_data(p).astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DatasetError(
                f"unsupported checkpoint format version {header.get('format_version')} in {path}"
            )
        out = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = f.read(count * 8)
            if len(buf) != count * 8:
                raise DatasetError(f"truncated checkpoint payload for '{name}' in {path}")
            out[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return out


def _data(p) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
