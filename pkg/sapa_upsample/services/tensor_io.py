"""Tensor files, parameter bundles, PGM images and CSV reports.

A tensor file is the magic ``SAPT``, a u32 format version, a u8 dtype code
(0 = float32, 1 = float64), a u8 rank, ``rank`` u32 dims and the little-endian
row-major payload.  A parameter bundle is the magic ``SAPP``, a u32 version, a u32
record count and then, per record, a u16 name length, the UTF-8 name and an
embedded tensor file.
"""

import csv
import io
import logging
import struct
from dataclasses import asdict
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from ..errors import ShapeError, TensorFormatError
from ..models import BenchRecord, GradCheckReport, ParamSet

log = logging.getLogger(__name__)

TENSOR_MAGIC = b"SAPT"
BUNDLE_MAGIC = b"SAPP"
FORMAT_VERSION = 1

DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise TensorFormatError(f"truncated file: expected {size} bytes of {what}, got {len(data)}")
    return data


def dump_tensor(stream: BinaryIO, x: np.ndarray) -> None:
    arr = np.asarray(x)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise TensorFormatError(f"only float32/float64 tensors can be stored, got {arr.dtype}")
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensor files hold ranks 1-4, got rank {arr.ndim}")
    stream.write(TENSOR_MAGIC)
    stream.write(struct.pack("<IBB", FORMAT_VERSION, DTYPE_CODES[dtype], arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    stream.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def load_tensor(stream: BinaryIO) -> np.ndarray:
    magic = _read_exact(stream, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version, code, rank = struct.unpack("<IBB", _read_exact(stream, 6, "header"))
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported format version {version}")
    if code not in CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= 4:
        raise TensorFormatError(f"unsupported rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "dims"))
    dtype = CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(stream, count * dtype.itemsize, "payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path: Path | str, x: np.ndarray) -> None:
    """Write ``x`` as a tensor file."""
    with open(path, "wb") as fh:
        dump_tensor(fh, x)
    log.info("wrote tensor %s to %s", np.shape(x), path)


def read_tensor(path: Path | str) -> np.ndarray:
    """Read a tensor file; raises TensorFormatError on malformed content."""
    with open(path, "rb") as fh:
        x = load_tensor(fh)
        if fh.read(1):
            raise TensorFormatError(f"{path}: trailing bytes after payload")
    return x


def write_named(path: Path | str, named: dict[str, np.ndarray]) -> None:
    """Write named tensors as a parameter bundle."""
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(named)))
        for name, tensor in named.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dump_tensor(fh, tensor)
    log.info("wrote %d parameter tensors to %s", len(named), path)


def write_params(path: Path | str, params: ParamSet) -> None:
    write_named(path, params.as_dict())


def read_named(path: Path | str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != BUNDLE_MAGIC:
            raise TensorFormatError(f"bad magic {magic!r}, expected {BUNDLE_MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != FORMAT_VERSION:
            raise TensorFormatError(f"unsupported format version {version}")
        named = {}
        for _ in range(count):
            (length,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, length, "name").decode("utf-8")
            named[name] = load_tensor(fh)
    return named


def read_params(path: Path | str) -> ParamSet:
    """Read a parameter bundle written by ``write_params``."""
    return ParamSet.from_dict(read_named(path))


def write_pgm(path: Path | str, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max scaled to 0..255; a constant map is all 128."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"PGM images are 2-D, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        pixels = np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.full(img.shape, 128, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: Path | str) -> np.ndarray:
    data = Path(path).read_bytes()
    fields_, pos = [], 0
    while len(fields_) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise TensorFormatError(f"{path}: truncated PGM header")
        fields_.append(data[start:pos])
    if fields_[0] != b"P5":
        raise TensorFormatError(f"{path}: not a binary PGM")
    try:
        width, height = int(fields_[1]), int(fields_[2])
    except ValueError:
        raise TensorFormatError(f"{path}: bad PGM dimensions") from None
    payload = data[pos + 1:pos + 1 + width * height]
    if len(payload) != width * height:
        raise TensorFormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def write_weights_txt(path: Path | str, weights: np.ndarray) -> None:
    """One weight per line, slot index first."""
    lines = [f"{k} {float(w):.9g}" for k, w in enumerate(np.asarray(weights).ravel())]
    Path(path).write_text("\n".join(lines) + "\n")


BENCH_COLUMNS = ["upsampler", "shape", "warmup", "iters", "mean_ms", "std_ms", "gflops", "params", "status"]


def bench_csv(records: Iterable[BenchRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        row = asdict(rec)
        row["shape"] = "x".join(str(v) for v in rec.shape)
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()


def gradcheck_csv(reports: Iterable[tuple[str, GradCheckReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case", "tensor", "max_rel_err", "mean_rel_err", "checked", "excluded", "passed"])
    for case, report in reports:
        for e in report.entries:
            writer.writerow([case, e.tensor, f"{e.max_rel_err:.3e}", f"{e.mean_rel_err:.3e}", e.checked, e.excluded, e.passed])
    return buf.getvalue()
