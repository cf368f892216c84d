"""File formats: PGM images, PFM float maps, and the SSCV1 cost-volume container.

All writers go through :func:`atomic_write`, so a crashed command never
leaves a partial file behind.

Formats:
  - PGM: binary P5, 8-bit, rows top to bottom.
  - PFM: grayscale "Pf", little-endian (scale line "-1.0"), rows bottom to
    top per the PFM convention.
  - SSCV1: magic ``SSCV1``, then u32 H, W, N (little-endian), then H*W*N
    float32 costs ordered u-major then v then i, then H*W*N u8 validity
    flags in the same order.
"""

import os
import tempfile
from pathlib import Path

import numpy as np

SSCV_MAGIC = b"SSCV1"


class FileFormatError(ValueError):
    """Input file is malformed or does not match its declared format."""


def atomic_write(path, data: bytes) -> None:
    """Write bytes to ``path`` via a same-directory temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.chmod(tmp, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pgm(image: np.ndarray) -> bytes:
    """8-bit binary PGM bytes from a float image in [0, 1] or a uint8 image."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    atomic_write(path, encode_pgm(image))


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM into a uint8 array of shape (H, W)."""
    data = Path(path).read_bytes()
    try:
        header, image = _parse_pnm_header(data, b"P5")
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    w, h, maxval = header
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    if len(image) < w * h:
        raise FileFormatError(f"{path}: truncated pixel data")
    return np.frombuffer(image[: w * h], dtype=np.uint8).reshape(h, w).copy()


def _parse_pnm_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"bad magic, expected {magic.decode()}")
    fields = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after the header
    return (fields[0], fields[1], fields[2]), data[pos:]


def encode_pfm(values: np.ndarray) -> bytes:
    """Grayscale little-endian PFM bytes (scale -1.0, rows bottom to top)."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"PFM wants a 2-D map, got shape {values.shape}")
    h, w = values.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + values[::-1].astype("<f4").tobytes()


def write_pfm(path, values: np.ndarray) -> None:
    atomic_write(path, encode_pfm(values))


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 array of shape (H, W)."""
    data = Path(path).read_bytes()
    if not data.startswith(b"Pf"):
        raise FileFormatError(f"{path}: bad magic, expected Pf")
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise FileFormatError(f"{path}: truncated header")
    try:
        w, h = (int(x) for x in parts[1].split())
        scale = float(parts[2])
    except ValueError as exc:
        raise FileFormatError(f"{path}: malformed header: {exc}") from exc
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) < w * h * 4:
        raise FileFormatError(f"{path}: truncated pixel data")
    values = np.frombuffer(body[: w * h * 4], dtype=dtype).reshape(h, w)
    return values[::-1].astype(np.float32)


def encode_cost_volume(costs: np.ndarray, valid: np.ndarray) -> bytes:
    """SSCV1 bytes from (H, W, N) costs and validity arrays."""
    costs = np.asarray(costs, dtype=np.float32)
    valid = np.asarray(valid, dtype=bool)
    if costs.ndim != 3 or costs.shape != valid.shape:
        raise ValueError(f"costs/valid must share an (H, W, N) shape, got {costs.shape} vs {valid.shape}")
    h, w, n = costs.shape
    header = SSCV_MAGIC + np.array([h, w, n], dtype="<u4").tobytes()
    # u-major, then v, then i
    cost_bytes = np.transpose(costs, (1, 0, 2)).astype("<f4").tobytes()
    valid_bytes = np.transpose(valid, (1, 0, 2)).astype(np.uint8).tobytes()
    return header + cost_bytes + valid_bytes


def write_cost_volume(path, costs: np.ndarray, valid: np.ndarray) -> None:
    atomic_write(path, encode_cost_volume(costs, valid))


def read_cost_volume(path):
    """Read an SSCV1 file; returns (costs, valid) of shape (H, W, N)."""
    data = Path(path).read_bytes()
    if not data.startswith(SSCV_MAGIC):
        raise FileFormatError(f"{path}: bad magic, expected SSCV1")
    if len(data) < len(SSCV_MAGIC) + 12:
        raise FileFormatError(f"{path}: truncated header")
    h, w, n = np.frombuffer(data, dtype="<u4", count=3, offset=len(SSCV_MAGIC))
    count = int(h) * int(w) * int(n)
    offset = len(SSCV_MAGIC) + 12
    if len(data) < offset + count * 5:
        raise FileFormatError(f"{path}: truncated payload for {h}x{w}x{n}")
    costs = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    valid = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset + count * 4)
    costs = np.transpose(costs.reshape(w, h, n), (1, 0, 2)).copy()
    valid = np.transpose(valid.reshape(w, h, n), (1, 0, 2)).astype(bool)
    return costs, valid
