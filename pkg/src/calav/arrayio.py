"""Self-describing binary container for named numpy arrays.

Layout: magic bytes, an 8-byte little-endian header length, a UTF-8 JSON
header (metadata plus per-array name/shape/dtype/offset), then the raw array
payloads. Offsets are relative to the start of the payload section. Writing
is fully deterministic, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_LEN_FORMAT = "<Q"

_DTYPES = {"<f8": np.dtype("<f8"), "<i4": np.dtype("<i4"),
           "<i8": np.dtype("<i8")}


def write_container(path: str | Path, magic: bytes, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if arr.dtype == np.float64:
            dtype = "<f8"
        elif arr.dtype == np.int32:
            dtype = "<i4"
        elif arr.dtype == np.int64:
            dtype = "<i8"
        else:
            raise TypeError(f"unsupported dtype for {name!r}: {arr.dtype}")
        blob = np.ascontiguousarray(arr).astype(_DTYPES[dtype], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": dtype, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack(_LEN_FORMAT, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path, magic: bytes
                   ) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        got = fh.read(len(magic))
        if got != magic:
            raise ValueError(f"{path}: bad magic {got!r} (expected {magic!r})")
        (header_len,) = struct.unpack(_LEN_FORMAT, fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return header["meta"], arrays
