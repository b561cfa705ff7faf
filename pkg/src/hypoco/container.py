"""Binary container for assembled operators.

Layout: 5-byte magic ``HYPO1``, a little-endian uint32 header length, a JSON
header, then the raw array payloads in header order.  Dense arrays are stored
C-contiguous little-endian; sparse matrices are stored as their CSR triplet
(data, indices, indptr).  The header records name, kind, dtype and shape for
every entry, so files are self-describing.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

MAGIC = b"HYPO1"


def _le(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous little-endian view/copy of the array."""
    dtype = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dtype)


def save_container(path: str, arrays: dict, meta: dict | None = None) -> None:
    """Write named dense arrays and CSR matrices to one binary file."""
    entries = []
    payloads = []
    for name, value in arrays.items():
        if sp.issparse(value):
            csr = value.tocsr()
            parts = {"data": _le(csr.data), "indices": _le(csr.indices),
                     "indptr": _le(csr.indptr)}
            entries.append({
                "name": name, "kind": "csr", "shape": list(csr.shape),
                "dtypes": {k: v.dtype.str for k, v in parts.items()},
                "lengths": {k: int(v.size) for k, v in parts.items()},
            })
            payloads.extend(parts.values())
        else:
            arr = _le(np.asarray(value))
            entries.append({"name": name, "kind": "dense",
                            "shape": list(arr.shape), "dtype": arr.dtype.str})
            payloads.append(arr)
    header = json.dumps({"arrays": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(np.array(len(header), dtype="<u4").tobytes())
        handle.write(header)
        for payload in payloads:
            handle.write(payload.tobytes())


def load_container(path: str) -> tuple[dict, dict]:
    """Read a container back; returns ({name: array-or-csr}, meta)."""
    with open(path, "rb") as handle:
        magic = handle.read(len(MAGIC))
        if magic != MAGIC:
            raise ConfigError([f"{path!r} is not a container file (bad magic {magic!r})"])
        (header_len,) = np.frombuffer(handle.read(4), dtype="<u4")
        header = json.loads(handle.read(int(header_len)).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            if entry["kind"] == "dense":
                count = int(np.prod(entry["shape"], dtype=np.int64))
                dtype = np.dtype(entry["dtype"])
                flat = np.frombuffer(handle.read(count * dtype.itemsize), dtype=dtype)
                arrays[entry["name"]] = flat.reshape(entry["shape"]).copy()
            elif entry["kind"] == "csr":
                parts = {}
                for part in ("data", "indices", "indptr"):
                    dtype = np.dtype(entry["dtypes"][part])
                    count = int(entry["lengths"][part])
                    parts[part] = np.frombuffer(
                        handle.read(count * dtype.itemsize), dtype=dtype).copy()
                arrays[entry["name"]] = sp.csr_matrix(
                    (parts["data"], parts["indices"], parts["indptr"]),
                    shape=tuple(entry["shape"]))
            else:
                raise ConfigError([f"unknown array kind {entry['kind']!r} in {path!r}"])
    return arrays, header["meta"]
