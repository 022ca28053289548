"""Single-file model checkpoint container.

Layout: magic line, one JSON header line (metadata plus an array index),
then each array's raw little-endian C-order bytes in index order. The
byte stream is a pure function of its contents, so identical states
produce identical files and save -> load round-trips bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError

_MAGIC = b"ECGLINK-CKPT-1\n"


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    index = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = arr.tobytes()
        index.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
             "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = json.dumps({"meta": meta, "arrays": index},
                        sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
        arrays = {}
        for entry in header["arrays"]:
            blob = fh.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise DataError(f"{path}: truncated checkpoint at array {entry['name']!r}")
            arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"]))
            arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], arrays
