"""Input checks shared by the estimators and the harness."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_scalar

from .geometry import GridSpec, ScanGeometry
from .projector import RayMask, Sinogram


def check_positive(value, name: str, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool):
        raise TypeError(f"{name} must be numeric, got a bool")
    return check_scalar(value, name, kind, min_val=0, include_boundaries="neither")


def check_grid(nx, ny, pixel_mm, center=(0.0, 0.0)) -> GridSpec:
    check_positive(nx, "nx", integer=True)
    check_positive(ny, "ny", integer=True)
    check_positive(pixel_mm, "pixel_mm")
    return GridSpec(int(nx), int(ny), float(pixel_mm), tuple(center))


def check_sinogram(X, geometry: ScanGeometry | None = None) -> Sinogram:
    """Accept a Sinogram, or a 2D array when ``geometry`` is given."""
    if isinstance(X, Sinogram):
        if geometry is not None and X.geometry.shape() != geometry.shape():
            raise ValueError("sinogram does not match the fitted geometry")
        return X
    if geometry is None:
        raise TypeError("a bare array needs a geometry; pass a Sinogram")
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D sinogram array, got shape {arr.shape}")
    return Sinogram(geometry, arr)


def check_mask(mask, geometry: ScanGeometry) -> RayMask:
    if mask is None:
        return RayMask.full(geometry)
    if isinstance(mask, RayMask):
        if mask.geometry.shape() != geometry.shape():
            raise ValueError("ray mask does not match the sinogram")
        return mask
    return RayMask(geometry, np.asarray(mask, dtype=bool))

