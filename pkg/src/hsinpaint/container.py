"""Bit-exact cube container: 6-byte magic, one JSON header line, raw
little-endian band-sequential payload.

Reflectance cubes are stored as f32 (in-memory float64 is rounded to
nearest on write), masks as u8. Dictionaries reuse the same container as
a (patch_dim, atoms, 1) cube so one loader serves both.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import HsiCube, HsiError, MaskCube, devectorize, vectorize

MAGIC = b"HSIB1\n"
_HEADER_KEYS = {"rows", "cols", "bands", "dtype", "order"}
_MAX_HEADER = 4096


def write_cube(path, cube: HsiCube | MaskCube) -> None:
    """Write a cube (f32) or mask (u8) in the container format."""
    if isinstance(cube, MaskCube):
        dtype = "u8"
        payload = vectorize(cube).astype(np.uint8).tobytes()
    elif isinstance(cube, HsiCube):
        dtype = "f32"
        payload = vectorize(cube).astype("<f4").tobytes()
    else:
        raise HsiError("bad-config", f"cannot serialize {type(cube).__name__}")
    header = json.dumps({"rows": cube.rows, "cols": cube.cols, "bands": cube.bands,
                         "dtype": dtype, "order": "bsq"},
                        separators=(",", ":")) + "\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def read_cube(path) -> HsiCube | MaskCube:
    """Read a container file; the header dtype decides cube vs mask."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise HsiError("bad-magic", f"{path}: not a cube container (bad magic)")
    nl = raw.find(b"\n", len(MAGIC), len(MAGIC) + _MAX_HEADER)
    if nl < 0:
        raise HsiError("bad-header", f"{path}: header line missing or oversized")
    try:
        header = json.loads(raw[len(MAGIC):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HsiError("bad-header", f"{path}: header is not valid JSON") from exc
    if not isinstance(header, dict) or set(header) != _HEADER_KEYS:
        raise HsiError("bad-header", f"{path}: header must carry exactly {sorted(_HEADER_KEYS)}")
    rows, cols, bands = header["rows"], header["cols"], header["bands"]
    for n in (rows, cols, bands):
        if not isinstance(n, int) or n < 1:
            raise HsiError("bad-header", f"{path}: dims must be positive integers")
    if header["order"] != "bsq":
        raise HsiError("bad-header", f"{path}: unsupported order {header['order']!r}")
    dtype = header["dtype"]
    if dtype not in ("f32", "u8"):
        raise HsiError("unknown-dtype", f"{path}: unknown dtype {dtype!r}")
    itemsize = 4 if dtype == "f32" else 1
    payload = raw[nl + 1:]
    expected = rows * cols * bands * itemsize
    if len(payload) != expected:
        raise HsiError("payload-length-mismatch",
                       f"{path}: payload holds {len(payload)} bytes, header implies {expected}")
    if dtype == "f32":
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return devectorize(flat, (rows, cols, bands))
    flat = np.frombuffer(payload, dtype=np.uint8)
    if not np.all((flat == 0) | (flat == 1)):
        raise HsiError("mask-values", f"{path}: mask values must be 0/1")
    cube = devectorize(flat.astype(np.float64), (rows, cols, bands))
    return MaskCube(cube.values)
