"""On-disk formats: PTYT tensor files, 16-bit PGM maps and JSON manifests."""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTYT"
VERSION = 1
REAL_F64 = 0
COMPLEX_F64 = 1
_HEADER = struct.Struct("<4sHBB")


class FormatError(ValueError):
    """Raised for malformed tensor files or manifests."""


def tensor_bytes(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        code = COMPLEX_F64
        payload = np.ascontiguousarray(a, dtype="<c16").tobytes()
    else:
        code = REAL_F64
        payload = np.ascontiguousarray(a, dtype="<f8").tobytes()
    if a.ndim > 255:
        raise FormatError("rank above 255 is not supported")
    head = _HEADER.pack(MAGIC, VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + payload


def tensor_from_bytes(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, code, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    off = _HEADER.size
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    dtype = {REAL_F64: "<f8", COMPLEX_F64: "<c16"}.get(code)
    if dtype is None:
        raise FormatError(f"unknown dtype code {code}")
    n = int(np.prod(dims, dtype=np.int64))
    size = np.dtype(dtype).itemsize
    if len(buf) - off != n * size:
        raise FormatError(f"payload has {len(buf) - off} bytes, expected {n * size}")
    return np.frombuffer(buf, dtype=dtype, offset=off).reshape(dims).astype(dtype[1:], copy=True)


def write_tensor(path, a):
    Path(path).write_bytes(tensor_bytes(a))


def read_tensor(path):
    return tensor_from_bytes(Path(path).read_bytes())


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


# -- PGM ---------------------------------------------------------------------

def write_pgm(path, values):
    """16-bit binary PGM from integers in [0, 65535]."""
    v = np.asarray(values)
    h, w = v.shape
    head = f"P5\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(head + np.clip(v, 0, 65535).astype(">u2").tobytes())


def read_pgm(path):
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 65535:
        raise FormatError("only 16-bit PGM is supported")
    data = buf[len(buf) - 2 * w * h:]
    return np.frombuffer(data, dtype=">u2").reshape(h, w).astype(np.int64)


def image_export(grid, stem):
    """Write ``<stem>_mag.pgm``, ``<stem>_phase.pgm`` and ``<stem>_scale.json``.

    Magnitude is min-max scaled; phase maps [-pi, pi] linearly so that 0 is
    mid-gray. Returns the sidecar dict.
    """
    stem = Path(stem)
    g = np.asarray(grid, dtype=np.complex128)
    mag = np.abs(g)
    lo, hi = float(mag.min()), float(mag.max())
    span = hi - lo
    q = np.zeros(mag.shape) if span == 0 else (mag - lo) / span * 65535.0
    write_pgm(stem.with_name(stem.name + "_mag.pgm"), np.rint(q))
    ph = np.angle(g)
    write_pgm(stem.with_name(stem.name + "_phase.pgm"), np.rint((ph + np.pi) / (2 * np.pi) * 65535.0))
    side = {"magnitude": {"min": lo, "max": hi}, "phase": {"min": -np.pi, "max": np.pi}}
    write_json(stem.with_name(stem.name + "_scale.json"), side)
    return side


def image_import(stem):
    """Inverse of :func:`image_export` up to 16-bit quantization."""
    stem = Path(stem)
    side = read_json(stem.with_name(stem.name + "_scale.json"))
    lo, hi = side["magnitude"]["min"], side["magnitude"]["max"]
    mag = read_pgm(stem.with_name(stem.name + "_mag.pgm")) / 65535.0 * (hi - lo) + lo
    ph = read_pgm(stem.with_name(stem.name + "_phase.pgm")) / 65535.0 * 2 * np.pi - np.pi
    return mag, ph
