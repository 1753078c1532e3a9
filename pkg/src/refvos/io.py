"""Binary netpbm images (P5/P6), raw float32 audio and parameter checkpoints."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, InputError

CKPT_MAGIC = b"RVOSCKPT"
CKPT_VERSION = 1


def write_ppm(path, image) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"PPM needs [H, W, 3] uint8, got {image.shape}")
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def write_pgm(path, image) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise InputError(f"PGM needs [H, W] uint8, got {image.shape}")
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def _tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header fields (with # comments)."""
    fields, pos = [], 0
    while len(fields) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError("truncated netpbm header")
        fields.append(buf[start:pos])
    return fields, pos + 1  # exactly one whitespace byte ends the header


def read_netpbm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise InputError(f"{path}: unsupported netpbm type {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise InputError(f"{path}: malformed header") from None
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit images are supported")
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    if len(buf) - start < n:
        raise InputError(f"{path}: expected {n} pixel bytes, found {len(buf) - start}")
    data = np.frombuffer(buf, dtype=np.uint8, count=n, offset=start)
    return data.reshape((h, w, 3) if ch == 3 else (h, w)).copy()


def write_audio(path, wave) -> None:
    Path(path).write_bytes(np.asarray(wave, dtype="<f4").tobytes())


def read_audio(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if len(buf) % 4:
        raise InputError(f"{path}: length {len(buf)} is not a whole number of float32 samples")
    return np.frombuffer(buf, dtype="<f4").astype(np.float64)


# Checkpoint layout (all integers little-endian):
#   magic[8] version:u32 count:u32
#   count x { name_len:u32 name:utf8 dtype:u8(4|8 bytes) ndim:u32 dims:u32*ndim data }

def save_checkpoint(path, state: dict) -> None:
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in (np.float32, np.float64):
            raise ContractError(f"parameter {name} has unsupported dtype {arr.dtype}")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BI", arr.dtype.itemsize, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:8] != CKPT_MAGIC:
        raise InputError(f"{path} is not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 8)
        if version != CKPT_VERSION:
            raise InputError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
        pos = 16
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            size, ndim = struct.unpack_from("<BI", buf, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            dtype = np.dtype("<f4" if size == 4 else "<f8")
            count_el = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf, dtype=dtype, count=count_el, offset=pos).reshape(shape)
            pos += count_el * size
            state[name] = arr.astype(dtype.newbyteorder("="))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    return state
