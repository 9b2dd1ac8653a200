"""
File Formats - Binary codecs and JSON helpers

All binary formats are little-endian.

CIMG1   complex image: magic, u32 height, u32 width, (re, im) f64 pairs row-major
RIMG1   real image:    magic, u32 height, u32 width, f64 values row-major
PMEAS1  measurement set: magic, u32 image_h, u32 image_w, u32 N, u32 L,
        L x (u32 row, u32 col), f64 alpha, u8 noiseless flag, u64 seed,
        L blocks of N x N f64 amplitudes in position order.
        The probe is stored next to it as CIMG1 (<stem>.probe.cimg).
DNZ1    external denoiser request: magic, u8 mode (0 real, 1 complex),
        f64 tau, then the image as RIMG1/CIMG1. The response is a bare image
        of the same kind and shape.
"""

import json
import os
import struct
from pathlib import Path
from typing import Any, Union

import numpy as np

from execution.pnp.forward_model import MeasurementSet, Probe, ScanGeometry

CIMG_MAGIC = b"CIMG1"
RIMG_MAGIC = b"RIMG1"
PMEAS_MAGIC = b"PMEAS1"
DNZ_MAGIC = b"DNZ1"

MODE_REAL = 0
MODE_COMPLEX = 1

_IMAGE_HEADER = struct.Struct("<5sII")
_PMEAS_HEADER = struct.Struct("<6sIIII")
_PMEAS_NOISE = struct.Struct("<dBQ")
_DNZ_HEADER = struct.Struct("<4sBd")

PathLike = Union[str, os.PathLike]


class FormatError(ValueError):
    """Bad magic, truncated payload or inconsistent header."""


# ============ JSON HELPERS ============

def load_json(filepath: PathLike) -> Any:
    """Load JSON file with encoding handling."""
    encodings = ['utf-8', 'utf-16', 'latin-1']
    for enc in encodings:
        try:
            with open(filepath, 'r', encoding=enc) as f:
                return json.load(f)
        except (UnicodeDecodeError, json.JSONDecodeError):
            continue
    raise ValueError(f"Could not decode {filepath}")


def save_json(filepath: PathLike, data: Any) -> None:
    """Save JSON file."""
    dirname = os.path.dirname(filepath)
    os.makedirs(dirname if dirname else '.', exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


# ============ IMAGES ============

def encode_image(img: np.ndarray) -> bytes:
    """CIMG1 for complex arrays, RIMG1 for everything else."""
    if img.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {img.shape}")
    h, w = img.shape
    if np.iscomplexobj(img):
        header = _IMAGE_HEADER.pack(CIMG_MAGIC, h, w)
        payload = np.ascontiguousarray(img, dtype="<c16").tobytes()
    else:
        header = _IMAGE_HEADER.pack(RIMG_MAGIC, h, w)
        payload = np.ascontiguousarray(img, dtype="<f8").tobytes()
    return header + payload


def decode_image(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one image starting at offset. Returns (image, end offset)."""
    if len(buf) - offset < _IMAGE_HEADER.size:
        raise FormatError("Truncated image header")
    magic, h, w = _IMAGE_HEADER.unpack_from(buf, offset)
    if magic == CIMG_MAGIC:
        dtype, itemsize = np.dtype("<c16"), 16
    elif magic == RIMG_MAGIC:
        dtype, itemsize = np.dtype("<f8"), 8
    else:
        raise FormatError(f"Unknown image magic {magic!r}")

    start = offset + _IMAGE_HEADER.size
    end = start + h * w * itemsize
    if len(buf) < end:
        raise FormatError(f"Truncated image payload: expected {h * w * itemsize} bytes, got {len(buf) - start}")
    img = np.frombuffer(buf, dtype=dtype, count=h * w, offset=start).reshape(h, w)
    native = np.complex128 if magic == CIMG_MAGIC else np.float64
    return img.astype(native), end


def write_image(path: PathLike, img: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_image(img))


def read_image(path: PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    img, end = decode_image(buf)
    if end != len(buf):
        raise FormatError(f"Trailing bytes after image in {path}")
    return img


# ============ MEASUREMENTS ============

def probe_path_for(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.probe.cimg")


def encode_measurements(ms: MeasurementSet) -> bytes:
    geom = ms.geometry
    n = geom.window_n
    parts = [_PMEAS_HEADER.pack(PMEAS_MAGIC, geom.image_h, geom.image_w, n, geom.n_positions)]
    parts.append(np.asarray(geom.positions, dtype="<u4").tobytes())
    noiseless = ms.seed is None
    parts.append(_PMEAS_NOISE.pack(ms.alpha, 1 if noiseless else 0, 0 if noiseless else ms.seed))
    parts.append(np.ascontiguousarray(ms.amplitudes, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_measurements(buf: bytes, probe: Probe) -> MeasurementSet:
    if len(buf) < _PMEAS_HEADER.size:
        raise FormatError("Truncated PMEAS1 header")
    magic, image_h, image_w, n, n_pos = _PMEAS_HEADER.unpack_from(buf, 0)
    if magic != PMEAS_MAGIC:
        raise FormatError(f"Unknown measurement magic {magic!r}")

    offset = _PMEAS_HEADER.size
    pos_bytes = n_pos * 2 * 4
    amp_bytes = n_pos * n * n * 8
    expected = offset + pos_bytes + _PMEAS_NOISE.size + amp_bytes
    if len(buf) != expected:
        raise FormatError(f"PMEAS1 size mismatch: expected {expected} bytes, got {len(buf)}")

    positions = np.frombuffer(buf, dtype="<u4", count=n_pos * 2, offset=offset).reshape(n_pos, 2)
    offset += pos_bytes
    alpha, noiseless, seed = _PMEAS_NOISE.unpack_from(buf, offset)
    offset += _PMEAS_NOISE.size
    amplitudes = np.frombuffer(buf, dtype="<f8", count=n_pos * n * n, offset=offset)

    geometry = ScanGeometry(
        image_h=image_h,
        image_w=image_w,
        window_n=n,
        positions=[(int(r), int(c)) for r, c in positions],
    )
    return MeasurementSet(
        geometry=geometry,
        probe=probe,
        amplitudes=amplitudes.reshape(n_pos, n, n).astype(np.float64),
        alpha=alpha,
        seed=None if noiseless else seed,
    )


def write_measurements(path: PathLike, ms: MeasurementSet) -> Path:
    """Write PMEAS1 plus the sibling probe file. Returns the probe path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_measurements(ms))
    probe_path = probe_path_for(path)
    write_image(probe_path, ms.probe.values)
    return probe_path


def read_measurements(path: PathLike, probe_path: PathLike | None = None) -> MeasurementSet:
    probe_values = read_image(probe_path or probe_path_for(path))
    return decode_measurements(Path(path).read_bytes(), Probe(values=probe_values))


# ============ DENOISER PROTOCOL ============

def encode_denoise_request(img: np.ndarray, tau: float) -> bytes:
    mode = MODE_COMPLEX if np.iscomplexobj(img) else MODE_REAL
    return _DNZ_HEADER.pack(DNZ_MAGIC, mode, float(tau)) + encode_image(img)


def decode_denoise_request(buf: bytes) -> tuple[np.ndarray, float]:
    if len(buf) < _DNZ_HEADER.size:
        raise FormatError("Truncated DNZ1 header")
    magic, mode, tau = _DNZ_HEADER.unpack_from(buf, 0)
    if magic != DNZ_MAGIC:
        raise FormatError(f"Unknown request magic {magic!r}")
    img, _ = decode_image(buf, _DNZ_HEADER.size)
    if (mode == MODE_COMPLEX) != np.iscomplexobj(img):
        raise FormatError(f"Mode byte {mode} does not match image kind")
    return img, tau
