"""Self-describing binary array container and checkpoint archives.

Cache artifacts are single arrays in the SFEM format:

    magic "SFEM" | version u32 | dtype code u32 | rank u32 | dims u64[rank] | payload

All integers and the row-major payload are little-endian. Checkpoints are
zip archives of SFEM entries plus a JSON config, so every stored tensor
stays readable with the same parser.
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zipfile
from pathlib import Path

import numpy as np

MAGIC = b"SFEM"
FORMAT_VERSION = 1

_DTYPE_BY_CODE = {0: "<f4", 1: "<f8", 2: "<i4", 3: "<i8"}
_CODE_BY_KIND = {("f", 4): 0, ("f", 8): 1, ("i", 4): 2, ("i", 8): 3}


class ContainerError(ValueError):
    pass


def array_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _CODE_BY_KIND:
        arr = arr.astype(np.float64)
        key = ("f", 8)
    code = _CODE_BY_KIND[key]
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(_DTYPE_BY_CODE[code]).tobytes(order="C")
    return header + payload


def array_from_bytes(blob: bytes) -> np.ndarray:
    if blob[:4] != MAGIC:
        raise ContainerError("bad magic; not an SFEM container")
    version, code, rank = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _DTYPE_BY_CODE:
        raise ContainerError(f"unknown dtype code {code}")
    offset = 16
    dims = struct.unpack_from(f"<{rank}Q", blob, offset) if rank else ()
    offset += 8 * rank
    arr = np.frombuffer(blob, dtype=_DTYPE_BY_CODE[code], offset=offset)
    return arr.reshape(dims).copy()


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array(path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, array_to_bytes(arr))


def read_array(path) -> np.ndarray:
    return array_from_bytes(Path(path).read_bytes())


def save_checkpoint(path, config: dict, arrays: dict[str, np.ndarray],
                    kind: str = "model") -> None:
    """Zip archive: meta.json (kind + config) and one SFEM entry per array."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        meta = {"format_version": FORMAT_VERSION, "kind": kind, "config": config}
        zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
        for name in sorted(arrays):
            zf.writestr(f"arrays/{name}.sfem", array_to_bytes(arrays[name]))
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ContainerError("unsupported checkpoint version")
        arrays = {}
        for entry in zf.namelist():
            if entry.startswith("arrays/") and entry.endswith(".sfem"):
                name = entry[len("arrays/"):-len(".sfem")]
                arrays[name] = array_from_bytes(zf.read(entry))
    return meta["config"], arrays


def checkpoint_kind(path) -> str:
    with zipfile.ZipFile(path, "r") as zf:
        return json.loads(zf.read("meta.json")).get("kind", "model")
