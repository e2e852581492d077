"""Versioned binary container for model parameters.

Layout (all integers little-endian)::

    magic       8 bytes   b"TRANSWKG"
    version     u32
    header_len  u32, then header_len bytes of UTF-8 JSON (sorted keys)
    sections, in the order listed under header["sections"]:
        name_len u16, name (UTF-8)
        dtype    u8   0 = float64, 1 = int64, 2 = string table
        ndim     u8, then ndim x u64 shape
        nbytes   u64, then payload
    trailer     4 bytes   b"END\\0"

A string table payload is the UTF-8 strings joined by ``\\n``; its shape is
``(count,)``. The header carries model kind, dimension, norm and the vocabulary
fingerprints used to refuse a model/dataset mismatch.
"""

import json
import os
import struct
import tempfile
from typing import Dict, Tuple

import numpy as np

MAGIC = b"TRANSWKG"
TRAILER = b"END\0"
FORMAT_VERSION = 1

_F8, _I8, _STR = 0, 1, 2


class ModelFormatError(ValueError):
    pass


def _encode_section(name: str, value) -> bytes:
    if isinstance(value, (list, tuple)):
        payload = "\n".join(value).encode("utf-8")
        if any("\n" in s for s in value):
            raise ValueError(f"section {name}: strings may not contain newlines")
        code, shape = _STR, (len(value),)
    else:
        arr = np.asarray(value)
        if arr.dtype.kind == "f":
            code, payload = _F8, np.ascontiguousarray(arr, dtype="<f8").tobytes()
        elif arr.dtype.kind in "iub":
            code, payload = _I8, np.ascontiguousarray(arr, dtype="<i8").tobytes()
        else:
            raise TypeError(f"section {name}: unsupported dtype {arr.dtype}")
        shape = arr.shape
    bname = name.encode("utf-8")
    out = [struct.pack("<H", len(bname)), bname, struct.pack("<BB", code, len(shape))]
    out += [struct.pack("<Q", d) for d in shape]
    out += [struct.pack("<Q", len(payload)), payload]
    return b"".join(out)


def dumps(header: dict, sections: Dict[str, object]) -> bytes:
    header = dict(header, format_version=FORMAT_VERSION, sections=list(sections))
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [_encode_section(k, v) for k, v in sections.items()]
    parts.append(TRAILER)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, where: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError(f"model file truncated in {where}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def loads(data: bytes) -> Tuple[dict, Dict[str, object]]:
    rd = _Reader(data)
    if rd.take(8, "magic") != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, hlen = struct.unpack("<II", rd.take(8, "header"))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"model format version {version} not supported (expected {FORMAT_VERSION})")
    header = json.loads(rd.take(hlen, "header").decode("utf-8"))
    sections: Dict[str, object] = {}
    for expected in header["sections"]:
        where = f"section {expected!r}"
        (nlen,) = struct.unpack("<H", rd.take(2, where))
        name = rd.take(nlen, where).decode("utf-8")
        if name != expected:
            raise ModelFormatError(f"expected {where}, found {name!r}")
        code, ndim = struct.unpack("<BB", rd.take(2, where))
        shape = tuple(struct.unpack("<Q", rd.take(8, where))[0] for _ in range(ndim))
        (nbytes,) = struct.unpack("<Q", rd.take(8, where))
        payload = rd.take(nbytes, where)
        if code == _STR:
            items = payload.decode("utf-8").split("\n") if shape[0] else []
            if len(items) != shape[0]:
                raise ModelFormatError(f"{where}: string count mismatch")
            sections[name] = items
        elif code in (_F8, _I8):
            dtype = "<f8" if code == _F8 else "<i8"
            arr = np.frombuffer(payload, dtype=dtype)
            if arr.size != int(np.prod(shape, dtype=np.int64)):
                raise ModelFormatError(f"{where}: payload size does not match shape {shape}")
            sections[name] = arr.reshape(shape).astype(np.float64 if code == _F8 else np.int64)
        else:
            raise ModelFormatError(f"{where}: unknown dtype code {code}")
    if rd.take(4, "trailer") != TRAILER:
        raise ModelFormatError("model file has a corrupt trailer")
    return header, sections


def atomic_write(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    rd = _Reader(data)
    if rd.take(8, "magic") != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, hlen = struct.unpack("<II", rd.take(8, "header"))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"model format version {version} not supported (expected {FORMAT_VERSION})")
    return json.loads(rd.take(hlen, "header").decode("utf-8"))
