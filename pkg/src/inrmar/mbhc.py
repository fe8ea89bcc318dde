"""Metal beam-hardening correction: threshold segmentation and the log-sinh corrector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .fbp import fbp
from .geometry import GridSpec, ScanGeometry
from .phantoms import Image
from .physics import Material, Spectrum, effective_pair
from .projector import Sinogram, project_image

_SMALL = 1e-3
_LARGE = 30.0


def lnsinhc(y):
    """``ln(sinh(y) / y)``, even in ``y``, stable for tiny and huge arguments."""
    y = np.abs(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    small = y < _SMALL
    large = y > _LARGE
    mid = ~(small | large)
    ys = y[small]
    out[small] = ys ** 2 / 6.0 - ys ** 4 / 180.0
    yl = y[large]
    out[large] = yl - np.log(2.0 * yl) + np.log1p(-np.exp(-2.0 * yl))
    ym = y[mid]
    out[mid] = np.log(np.sinh(ym) / ym)
    return out if out.ndim else float(out)


def dlnsinhc(y):
    """Derivative ``coth(y) - 1/y`` (odd in ``y``)."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    out = np.empty_like(a)
    small = a < _SMALL
    large = a > _LARGE
    mid = ~(small | large)
    out[small] = a[small] / 3.0 - a[small] ** 3 / 45.0
    out[large] = 1.0 - 1.0 / a[large]
    out[mid] = 1.0 / np.tanh(a[mid]) - 1.0 / a[mid]
    out = np.sign(y) * out
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class MetalMask:
    grid: GridSpec
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.grid.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "mask", m)

    @property
    def n_pixels(self) -> int:
        return int(self.mask.sum())

    def as_image(self) -> Image:
        return Image(self.grid, self.mask.astype(float), "mask")


def segment_metal(image: Image, threshold: float) -> MetalMask:
    if image.kind != "mu":
        raise ValueError("metal segmentation expects an attenuation image")
    return MetalMask(image.grid, image.values > threshold)


def auto_threshold(image: Image, floor: float, n_hist: int = 64) -> float:
    """Midpoint between the two largest histogram modes above ``floor``.

    Falls back to the midpoint of ``floor`` and the image maximum when fewer
    than two modes exist.
    """
    v = image.values[image.values > floor]
    top = float(image.values.max())
    if v.size < 2 or top <= floor:
        return 0.5 * (floor + top)
    counts, edges = np.histogram(v, bins=n_hist, range=(floor, top))
    centers = 0.5 * (edges[1:] + edges[:-1])
    padded = np.concatenate([[-1], counts, [-1]])
    peaks = np.flatnonzero((counts > padded[:-2]) & (counts >= padded[2:]) & (counts > 0))
    if peaks.size < 2:
        return 0.5 * (floor + top)
    best = peaks[np.argsort(counts[peaks], kind="stable")[::-1][:2]]
    return float(centers[best].mean())


def auto_kappa(metal: Material, spectrum: Spectrum, E0: float | None = None) -> float:
    """``kappa = -alpha * lambda``: metal slope at ``E0`` times the spectrum's effective half-width."""
    E0 = spectrum.mean_energy if E0 is None else E0
    alpha = effective_pair(metal, E0).sigma0
    return float(-alpha * spectrum.effective_half_width)


def consistency_kappa(sino: Sinogram, mask: MetalMask, bounds=(1e-4, 2.0)) -> float:
    """Kappa that makes the corrected sinogram ``P + lnsinhc(kappa R chi_D)`` most
    consistent: least spread of its zeroth moment over views (parallel beam only)."""
    if sino.geometry.mode != "parallel":
        raise ValueError("moment-based kappa selection needs parallel-beam data")
    q = project_image(mask.as_image(), sino.geometry).values
    if not q.any():
        return float(bounds[1])

    def spread(k):
        return float(np.std((sino.values + lnsinhc(k * q)).sum(axis=1)))

    res = minimize_scalar(spread, bounds=bounds, method="bounded", options={"xatol": 1e-5})
    return float(res.x)


def bh_corrector(mask: MetalMask, kappa: float, geometry: ScanGeometry) -> Image:
    """``-R^-1 lnsinhc(kappa R chi_D)`` on the mask's grid."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not mask.mask.any():
        return Image(mask.grid, np.zeros(mask.grid.shape), "mu")
    q = project_image(mask.as_image(), geometry)
    corr = Sinogram(geometry, lnsinhc(kappa * q.values))
    return Image(mask.grid, -fbp(corr, mask.grid).values, "mu")


@dataclass(frozen=True, eq=False)
class MBHCResult:
    image: Image
    mask: MetalMask
    threshold: float
    kappa: float


def mbhc_reconstruct(sino: Sinogram, grid: GridSpec, threshold, kappa,
                     base: Image | None = None, floor: float = 0.0) -> MBHCResult:
    """FBP minus the metal corrector image.

    ``threshold="auto"`` uses :func:`auto_threshold` above ``floor``;
    ``kappa="auto"`` uses :func:`consistency_kappa` (parallel) or 1 (fan).
    """
    base = fbp(sino, grid) if base is None else base
    if threshold == "auto":
        threshold = auto_threshold(base, floor)
    mask = segment_metal(base, float(threshold))
    if not mask.mask.any():
        return MBHCResult(base, mask, float(threshold), float("nan") if kappa == "auto" else float(kappa))
    if kappa == "auto":
        kappa = consistency_kappa(sino, mask) if sino.geometry.mode == "parallel" else 1.0
    corr = bh_corrector(mask, float(kappa), sino.geometry)
    return MBHCResult(Image(grid, base.values - corr.values, "mu"), mask, float(threshold), float(kappa))
