"""On-disk formats: DCTF tensor files, PPM/PGM images, key=value manifests.

DCTF is the checkpoint/fixture tensor format: magic bytes 'DCTF', a version
byte 0x01, an ndim byte (always 4), four little-endian uint32 dims
(n, c, h, w), then n*c*h*w little-endian IEEE-754 float32 values in
row-major order. A checkpoint file is a plain concatenation of DCTF
records; the accompanying manifest lists each record's name, shape, and
byte offset plus run metadata.

Images use binary netpbm: P6 (8-bit RGB) for images, P5 (8-bit gray) for
label maps, one class id per pixel.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

DCTF_MAGIC = b"DCTF"
DCTF_VERSION = 1
_HEADER = struct.Struct("<4sBB4I")


def dctf_bytes(array: np.ndarray) -> bytes:
    """Serialize one 4-D float array as a DCTF record."""
    if array.ndim != 4:
        raise ValueError(f"DCTF stores 4-D tensors, got shape {array.shape}")
    data = np.ascontiguousarray(array, dtype="<f4")
    header = _HEADER.pack(DCTF_MAGIC, DCTF_VERSION, 4, *array.shape)
    return header + data.tobytes()


def read_dctf_record(buf: bytes, offset: int, source: str = "<buffer>") -> np.ndarray:
    """Parse one DCTF record starting at ``offset``."""
    if offset + _HEADER.size > len(buf):
        raise DataError(f"{source}: truncated DCTF header at offset {offset}")
    magic, version, ndim, n, c, h, w = _HEADER.unpack_from(buf, offset)
    if magic != DCTF_MAGIC:
        raise DataError(f"{source}: bad DCTF magic {magic!r} at offset {offset}")
    if version != DCTF_VERSION:
        raise DataError(f"{source}: unsupported DCTF version {version}")
    if ndim != 4:
        raise DataError(f"{source}: DCTF ndim must be 4, got {ndim}")
    count = n * c * h * w
    start = offset + _HEADER.size
    end = start + 4 * count
    if end > len(buf):
        raise DataError(f"{source}: truncated DCTF payload at offset {offset}")
    flat = np.frombuffer(buf, dtype="<f4", count=count, offset=start)
    return flat.reshape(n, c, h, w).copy()


def write_dctf(path: Path | str, array: np.ndarray) -> None:
    Path(path).write_bytes(dctf_bytes(array))


def read_dctf(path: Path | str) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return read_dctf_record(buf, 0, source=str(path))


# ---------------------------------------------------------------------------
# netpbm images
# ---------------------------------------------------------------------------

def _pnm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens; '#' starts a comment."""
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        if i >= len(buf):
            raise DataError("truncated netpbm header")
        ch = buf[i:i + 1]
        if ch == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(buf) and not buf[j:j + 1].isspace():
                j += 1
            tokens.append(buf[i:j])
            i = j
    return tokens, i + 1  # exactly one whitespace byte separates header and raster


def write_ppm(path: Path | str, image: np.ndarray) -> None:
    """Write a float image (3, h, w) in [0, 1] as binary P6.

    Values are clamped to [0, 1] then scaled by 255 and rounded
    half-to-even before quantization.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, h, w) image, got shape {image.shape}")
    _, h, w = image.shape
    clamped = np.clip(image, 0.0, 1.0)
    pixels = np.rint(clamped * 255.0).astype(np.uint8)
    raster = pixels.transpose(1, 2, 0).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + raster)


def read_ppm(path: Path | str) -> np.ndarray:
    """Read a binary P6 image into a float32 array (3, h, w) in [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    (magic, ws, hs, maxval), start = _pnm_tokens(buf, 4)
    if magic != b"P6":
        raise DataError(f"{path}: expected P6 magic, got {magic!r}")
    if maxval != b"255":
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval!r}")
    w, h = int(ws), int(hs)
    raster = np.frombuffer(buf, dtype=np.uint8, count=3 * h * w, offset=start)
    if raster.size < 3 * h * w:
        raise DataError(f"{path}: truncated P6 raster")
    return raster.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32) / 255.0


def write_pgm(path: Path | str, labels: np.ndarray) -> None:
    """Write an integer label map (h, w) with values < 256 as binary P5."""
    if labels.ndim != 2:
        raise ValueError(f"expected (h, w) label map, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label values must fit in one byte")
    h, w = labels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode()
                           + labels.astype(np.uint8).tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    """Read a binary P5 map into an int64 array (h, w)."""
    path = Path(path)
    buf = path.read_bytes()
    (magic, ws, hs, maxval), start = _pnm_tokens(buf, 4)
    if magic != b"P5":
        raise DataError(f"{path}: expected P5 magic, got {magic!r}")
    if maxval != b"255":
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval!r}")
    w, h = int(ws), int(hs)
    raster = np.frombuffer(buf, dtype=np.uint8, count=h * w, offset=start)
    if raster.size < h * w:
        raise DataError(f"{path}: truncated P5 raster")
    return raster.reshape(h, w).astype(np.int64)


# ---------------------------------------------------------------------------
# key = value manifests and checkpoint bundles
# ---------------------------------------------------------------------------

def format_kv(items: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def parse_kv(text: str, source: str = "<manifest>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def save_checkpoint(stem: Path | str, tensors: dict[str, np.ndarray],
                    metadata: dict[str, str]) -> tuple[Path, Path]:
    """Write ``<stem>.dctf`` (concatenated records) and ``<stem>.manifest``.

    The manifest carries the metadata as key = value lines followed by one
    ``tensor <name> <n> <c> <h> <w> <offset>`` line per record.
    """
    stem = Path(stem)
    blob = bytearray()
    lines = [format_kv(metadata)]
    for name, array in tensors.items():
        if " " in name:
            raise ValueError(f"tensor name may not contain spaces: {name!r}")
        offset = len(blob)
        blob += dctf_bytes(array)
        n, c, h, w = array.shape
        lines.append(f"tensor {name} {n} {c} {h} {w} {offset}\n")
    dctf_path = stem.with_suffix(".dctf")
    manifest_path = stem.with_suffix(".manifest")
    dctf_path.write_bytes(bytes(blob))
    manifest_path.write_text("".join(lines))
    return dctf_path, manifest_path


def load_checkpoint(stem: Path | str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read a checkpoint bundle written by :func:`save_checkpoint`."""
    stem = resolve_checkpoint_stem(stem)
    manifest_path = stem.with_suffix(".manifest")
    dctf_path = stem.with_suffix(".dctf")
    for p in (manifest_path, dctf_path):
        if not p.exists():
            raise DataError(f"missing checkpoint file: {p}")
    buf = dctf_path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    metadata: dict[str, str] = {}
    for lineno, raw in enumerate(manifest_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("tensor "):
            parts = line.split()
            if len(parts) != 7:
                raise DataError(f"{manifest_path}:{lineno}: malformed tensor line {raw!r}")
            name = parts[1]
            n, c, h, w, offset = (int(v) for v in parts[2:])
            array = read_dctf_record(buf, offset, source=str(dctf_path))
            if array.shape != (n, c, h, w):
                raise DataError(
                    f"{dctf_path}: tensor {name} has shape {array.shape}, "
                    f"manifest says {(n, c, h, w)}")
            tensors[name] = array
        else:
            metadata.update(parse_kv(line, source=f"{manifest_path}:{lineno}"))
    return tensors, metadata


def resolve_checkpoint_stem(path: Path | str) -> Path:
    """Accept a stem, a .dctf path, or a .manifest path."""
    path = Path(path)
    if path.suffix in (".dctf", ".manifest"):
        return path.with_suffix("")
    return path
