"""Masked error metrics and image export (16-bit PGM, CSV)."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .geometry import GridSpec
from .phantoms import Image


def _masked_diff(image, reference, mask) -> np.ndarray:
    a = image.values if isinstance(image, Image) else np.asarray(image, dtype=float)
    b = reference.values if isinstance(reference, Image) else np.asarray(reference, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or a.shape != m.shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape}, mask {m.shape}")
    if not m.any():
        raise ValueError("metric mask is empty")
    return (a - b)[m]


def mae(image, reference, mask) -> float:
    return float(np.abs(_masked_diff(image, reference, mask)).mean())


def mse(image, reference, mask) -> float:
    d = _masked_diff(image, reference, mask)
    return float((d * d).mean())


def mask_digest(mask) -> str:
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    return hashlib.sha256(m.tobytes() + str(m.shape).encode()).hexdigest()


def export_image(image, path, window: tuple[float, float], csv: bool = False) -> None:
    """Linear window onto 0..65535, written as binary PGM with the top row at
    the highest y; ``csv=True`` also writes raw values (array order) next to it."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("window needs lo < hi")
    values = image.values if isinstance(image, Image) else np.asarray(image, dtype=float)
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    pix = np.rint(scaled * 65535.0).astype(">u2")[::-1]
    path = Path(path)
    h, w = pix.shape
    path.write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + pix.tobytes())
    if csv:
        write_image_csv(values, path.with_suffix(".csv"))


def read_pgm(path) -> np.ndarray:
    """Inverse of the PGM layout written by :func:`export_image` (array order, uint16)."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM")
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w)[::-1].astype(np.uint16)


def write_image_csv(values, path) -> None:
    np.savetxt(path, np.asarray(values, dtype=float), delimiter=",", fmt="%.17g")


def read_image_csv(path, grid: GridSpec | None = None, kind: str = "mu"):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return Image(grid, arr, kind) if grid is not None else arr
