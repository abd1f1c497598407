"""Binary file formats: MTEN tensors, P5 PGM images and checkpoint directories.

MTEN layout (little-endian)::

    b"MTEN" | u32 version=1 | u32 dtype | u32 rank | rank x u32 dims | payload

dtype code 1 is float32; code 2 (float64) is an extension used for 64-bit
golden values.
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

MTEN_MAGIC = b"MTEN"
MTEN_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class FormatError(ValueError):
    pass


def write_mten(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _CODE_FOR:
        arr = arr.astype(np.float32)
    code = _CODE_FOR[arr.dtype]
    header = MTEN_MAGIC + struct.pack("<III", MTEN_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_DTYPE_CODES[code]).tobytes(order="C"))


def read_mten(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MTEN_MAGIC:
        raise FormatError(f"{path}: not an MTEN file")
    version, code, rank = struct.unpack_from("<III", raw, 4)
    if version != MTEN_VERSION:
        raise FormatError(f"{path}: unsupported MTEN version {version}")
    if code not in _DTYPE_CODES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}I", raw, 16)
    offset = 16 + 4 * rank
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != count * dtype.itemsize:
        raise FormatError(f"{path}: payload size does not match shape {dims}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(dims).astype(dtype.newbyteorder("="))


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"(#[^\n]*\n)|(\S+)")


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary (P5) PGM; returns (integer pixel array, maxval)."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        m = _TOKEN.search(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        pos = m.end()
        if m.group(2) is not None:
            fields.append(m.group(2))
    if fields[0] != b"P5":
        raise FormatError(f"{path}: only binary P5 PGM is supported")
    width, height, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad maxval {maxval}")
    pos += 1  # exactly one whitespace byte after maxval
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    n = width * height
    if len(raw) - pos < n * dtype.itemsize:
        raise FormatError(f"{path}: pixel data truncated")
    pixels = np.frombuffer(raw, dtype=dtype, count=n, offset=pos).reshape(height, width)
    return pixels.astype(np.uint16 if maxval >= 256 else np.uint8), maxval


def write_pgm(path, pixels: np.ndarray, maxval: int | None = None) -> None:
    """Write integer pixels as P5. Float input is rounded and clipped to ``[0, maxval]``."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {arr.shape}")
    if maxval is None:
        maxval = 65535 if arr.dtype == np.uint16 else 255
    if np.issubdtype(arr.dtype, np.floating):
        arr = np.clip(np.rint(arr), 0, maxval)
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode()
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


def read_image(path) -> tuple[np.ndarray, int | None]:
    """Load a PGM or MTEN image as float32; maxval is None for MTEN."""
    path = Path(path)
    if path.suffix.lower() == ".mten":
        return read_mten(path).astype(np.float32), None
    pixels, maxval = read_pgm(path)
    return pixels.astype(np.float32), maxval


def write_image(path, image: np.ndarray, maxval: int | None = 255) -> None:
    path = Path(path)
    if path.suffix.lower() == ".mten":
        write_mten(path, np.asarray(image, dtype=np.float32))
    else:
        write_pgm(path, image, maxval)


# ---------------------------------------------------------------------------
# checkpoints: a directory of MTEN files plus a key = value manifest
# ---------------------------------------------------------------------------


def save_checkpoint(directory, state: dict[str, np.ndarray], manifest: dict[str, object]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    for name in names:
        write_mten(directory / f"{name}.mten", state[name])
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    lines.append(f"tensors = {','.join(names)}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    manifest = read_key_values(directory / "manifest.txt")
    names = [n for n in manifest.pop("tensors", "").split(",") if n]
    state = {n: read_mten(directory / f"{n}.mten") for n in names}
    return state, manifest


def read_key_values(path) -> dict[str, str]:
    """Parse a line-based ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out
