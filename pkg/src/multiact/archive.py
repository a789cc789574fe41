"""Parameter archive: a JSON header line, then raw little-endian float64 payloads.

The header is a list of ``[name, shape]`` pairs in payload order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class ArchiveError(ValueError):
    pass


def save_params(path: str | Path, params: dict[str, np.ndarray]) -> None:
    header = [[name, list(v.shape)] for name, v in params.items()]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_params(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
        entries = [(str(name), tuple(int(d) for d in shape)) for name, shape in header]
    except (UnicodeDecodeError, ValueError, TypeError) as exc:
        raise ArchiveError(f"{path}: corrupt archive header ({exc})") from None
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(payload):
            raise ArchiveError(
                f"{path}: payload truncated in parameter {name!r} "
                f"(needs {nbytes} bytes at offset {offset}, {len(payload) - offset} left)"
            )
        params[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise ArchiveError(f"{path}: {len(payload) - offset} trailing bytes after last parameter")
    return params
