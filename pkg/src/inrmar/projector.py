"""Forward models: exact analytic line integrals, pixel-image projection and
its adjoint, polychromatic Beer-Lambert data, noise, and ray-subset masks."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .geometry import GridSpec, ScanGeometry, clip_arrays, ray_arrays
from .phantoms import Image, PhantomSpec
from .physics import Spectrum, attenuation_at

SINO_MAGIC = b"INRSINO1"


@dataclass(frozen=True, eq=False)
class Sinogram:
    geometry: ScanGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.geometry.shape():
            raise ValueError(f"sinogram shape {v.shape} does not match geometry {self.geometry.shape()}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram contains non-finite values")
        object.__setattr__(self, "values", v)

    def with_values(self, values) -> "Sinogram":
        return Sinogram(self.geometry, values)


@dataclass(frozen=True, eq=False)
class RayMask:
    geometry: ScanGeometry
    included: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.included, dtype=bool)
        if m.shape != self.geometry.shape():
            raise ValueError("mask shape does not match geometry")
        if not m.any():
            raise ValueError("ray mask excludes every ray")
        object.__setattr__(self, "included", m)

    @classmethod
    def full(cls, geometry: ScanGeometry) -> "RayMask":
        return cls(geometry, np.ones(geometry.shape(), dtype=bool))


def path_lengths(phantom: PhantomSpec, geometry: ScanGeometry, chunk: int = 8192) -> np.ndarray:
    """Exact length of every ray inside each material, shape ``(n_views, n_bins, n_materials)``.

    Each ray is cut at every primitive boundary crossing; each piece is then
    assigned to the topmost primitive containing its midpoint.
    """
    origins, dirs, L = ray_arrays(geometry)
    n_mat = len(phantom.materials)
    out = np.zeros((origins.shape[0] * origins.shape[1], max(n_mat, 1)))
    if not phantom.primitives:
        return out.reshape(*geometry.shape(), -1)[..., :n_mat]
    mat_of = np.append(phantom.material_index(), -1)
    O = origins.reshape(-1, 2)
    D = dirs.reshape(-1, 2)
    for s in range(0, O.shape[0], chunk):
        o, d = O[s:s + chunk], D[s:s + chunk]
        T = np.concatenate([p.shape.crossings(o, d) for p in phantom.primitives], axis=1)
        T = np.where(np.isfinite(T), np.clip(T, 0.0, L), L)
        T = np.sort(np.concatenate([np.zeros((len(o), 1)), T, np.full((len(o), 1), L)], axis=1), axis=1)
        seg = np.diff(T, axis=1)
        mid = 0.5 * (T[:, 1:] + T[:, :-1])
        pts = o[:, None, :] + mid[..., None] * d[:, None, :]
        mat = mat_of[phantom.labels(pts[..., 0], pts[..., 1], strict=True)]
        keep = (mat >= 0) & (seg > 0)
        rows = np.broadcast_to(np.arange(len(o))[:, None], mat.shape)[keep]
        flat = np.bincount(rows * n_mat + mat[keep], weights=seg[keep], minlength=len(o) * n_mat)
        out[s:s + chunk] = flat.reshape(len(o), n_mat)
    return out.reshape(*geometry.shape(), n_mat)


def _mu_matrix(phantom: PhantomSpec, energies) -> np.ndarray:
    """``mu[m, k]`` for material m at energy k."""
    return np.array([np.atleast_1d(attenuation_at(m, energies)) for m in phantom.materials])


def project_analytic_mono(phantom: PhantomSpec, geometry: ScanGeometry, E: float) -> Sinogram:
    if not phantom.primitives:
        return Sinogram(geometry, np.zeros(geometry.shape()))
    lengths = path_lengths(phantom, geometry)
    mu = _mu_matrix(phantom, [E])[:, 0]
    return Sinogram(geometry, lengths @ mu)


def poly_from_lengths(lengths: np.ndarray, mu: np.ndarray, spectrum: Spectrum) -> np.ndarray:
    """``-ln sum_k w_k exp(-sum_m len_m mu_m(E_k))``, evaluated stably."""
    atten = lengths @ mu  # (..., n_energies)
    w = spectrum.weights
    nz = w > 0
    return -logsumexp(-atten[..., nz], b=w[nz], axis=-1)


def project_poly(phantom: PhantomSpec, geometry: ScanGeometry, spectrum: Spectrum) -> Sinogram:
    if not phantom.primitives:
        return Sinogram(geometry, np.zeros(geometry.shape()))
    lengths = path_lengths(phantom, geometry)
    mu = _mu_matrix(phantom, spectrum.energies)
    return Sinogram(geometry, poly_from_lengths(lengths, mu, spectrum))


# --- pixel-image projector -------------------------------------------------

@njit(cache=True)
def _march(o, d, t0, t1, step, x0, y0, px, nx, ny, img, out_sino, adjoint, y_val, acc):
    """Midpoint march with bilinear weights along one ray; forward or adjoint."""
    total = 0.0
    n = int(np.ceil((t1 - t0) / step))
    for k in range(n):
        a = t0 + k * step
        b = min(a + step, t1)
        w = b - a
        if w <= 0.0:
            break
        t = 0.5 * (a + b)
        fx = (o[0] + t * d[0] - x0) / px - 0.5
        fy = (o[1] + t * d[1] - y0) / px - 0.5
        ix = int(np.floor(fx))
        iy = int(np.floor(fy))
        ax = fx - ix
        ay = fy - iy
        for dy in range(2):
            jy = iy + dy
            if jy < 0 or jy >= ny:
                continue
            wy = ay if dy == 1 else 1.0 - ay
            for dx in range(2):
                jx = ix + dx
                if jx < 0 or jx >= nx:
                    continue
                wx = ax if dx == 1 else 1.0 - ax
                if adjoint:
                    acc[jy * nx + jx] += w * wx * wy * y_val
                else:
                    total += w * wx * wy * img[jy * nx + jx]
    return total


@njit(cache=True)
def _project_kernel(origins, dirs, t0, t1, step, x0, y0, px, nx, ny, img):
    nv, nb = t0.shape
    out = np.zeros((nv, nb))
    dummy = np.zeros(1)
    for v in range(nv):
        for b in range(nb):
            if t1[v, b] > t0[v, b]:
                out[v, b] = _march(origins[v, b], dirs[v, b], t0[v, b], t1[v, b], step,
                                   x0, y0, px, nx, ny, img, out, False, 0.0, dummy)
    return out


@njit(cache=True)
def _adjoint_kernel(origins, dirs, t0, t1, step, x0, y0, px, nx, ny, sino):
    nv, nb = t0.shape
    acc = np.zeros(nx * ny)
    dummy = np.zeros(1)
    for v in range(nv):
        for b in range(nb):
            if t1[v, b] > t0[v, b] and sino[v, b] != 0.0:
                _march(origins[v, b], dirs[v, b], t0[v, b], t1[v, b], step,
                       x0, y0, px, nx, ny, dummy, sino, True, sino[v, b], acc)
    return acc


_RAY_CACHE: dict = {}


def _clipped_rays(geometry: ScanGeometry, grid: GridSpec):
    key = (geometry.mode, geometry.n_views, geometry.n_bins, geometry.bin_spacing,
           geometry.angular_range, geometry.source_axis_distance, geometry.detector_u_offset,
           grid.nx, grid.ny, grid.pixel_mm, grid.center)
    if key not in _RAY_CACHE:
        if len(_RAY_CACHE) > 8:
            _RAY_CACHE.clear()
        origins, dirs, _ = ray_arrays(geometry)
        t0, t1 = clip_arrays(origins, dirs, grid)
        _RAY_CACHE[key] = (np.ascontiguousarray(origins), np.ascontiguousarray(dirs), t0, t1)
    return _RAY_CACHE[key]


def project_image(image: Image, geometry: ScanGeometry, step: float | None = None) -> Sinogram:
    """Line integrals of the bilinearly interpolated pixel image (half-pixel steps)."""
    grid = image.grid
    step = step or 0.5 * grid.pixel_mm
    o, d, t0, t1 = _clipped_rays(geometry, grid)
    x0, _, y0, _ = grid.bounds
    flat = np.ascontiguousarray(image.values, dtype=float).ravel()
    out = _project_kernel(o, d, t0, t1, step, x0, y0, grid.pixel_mm, grid.nx, grid.ny, flat)
    return Sinogram(geometry, out)


def backproject_adjoint(sino: Sinogram, grid: GridSpec, step: float | None = None) -> Image:
    """Exact adjoint of :func:`project_image`."""
    step = step or 0.5 * grid.pixel_mm
    o, d, t0, t1 = _clipped_rays(sino.geometry, grid)
    x0, _, y0, _ = grid.bounds
    acc = _adjoint_kernel(o, d, t0, t1, step, x0, y0, grid.pixel_mm, grid.nx, grid.ny,
                          np.ascontiguousarray(sino.values, dtype=float))
    return Image(grid, acc.reshape(grid.shape), "mu")


# --- noise and masks ---------------------------------------------------------

def apply_noise(sino: Sinogram, photons_per_ray: float = 1e5, electronic_sd: float = 10.0,
                seed: int = 0) -> Sinogram:
    """Poisson counts plus Gaussian electronic noise; log taken after clamping to 1 photon."""
    if not photons_per_ray > 0:
        raise ValueError("photons_per_ray must be positive")
    rng = np.random.Generator(np.random.Philox(seed))
    expected = photons_per_ray * np.exp(-sino.values)
    counts = rng.poisson(expected).astype(float)
    if electronic_sd > 0:
        counts += rng.normal(0.0, electronic_sd, size=counts.shape)
    return sino.with_values(-np.log(np.maximum(counts, 1.0) / photons_per_ray))


def metal_chord(phantom_subset: PhantomSpec, geometry: ScanGeometry) -> np.ndarray:
    if not phantom_subset.primitives:
        return np.zeros(geometry.shape())
    return path_lengths(phantom_subset, geometry).sum(axis=-1)


def rays_through_mask(phantom_subset: PhantomSpec, geometry: ScanGeometry, threshold: float = 0.0) -> RayMask:
    """Keep rays whose total chord through ``phantom_subset`` is at most ``threshold`` mm."""
    return RayMask(geometry, metal_chord(phantom_subset, geometry) <= threshold)


# --- file formats --------------------------------------------------------------

def write_sinogram(sino: Sinogram, path) -> None:
    """Binary file (32-byte header + LE float64 view-major) plus ``.json`` geometry sidecar."""
    path = Path(path)
    g = sino.geometry
    header = SINO_MAGIC + struct.pack("<qqd", g.n_views, g.n_bins, g.bin_spacing)
    path.write_bytes(header + np.ascontiguousarray(sino.values, dtype="<f8").tobytes())
    path.with_suffix(".json").write_text(json.dumps(g.to_dict(), indent=2, sort_keys=True) + "\n")


def read_sinogram(path, geometry: ScanGeometry | None = None) -> Sinogram:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != SINO_MAGIC:
        raise ValueError(f"{path}: not a sinogram file")
    n_views, n_bins, spacing = struct.unpack("<qqd", raw[8:32])
    values = np.frombuffer(raw[32:], dtype="<f8").reshape(n_views, n_bins).copy()
    if geometry is None:
        side = path.with_suffix(".json")
        geometry = ScanGeometry.from_dict(json.loads(side.read_text()))
    if geometry.shape() != (n_views, n_bins) or geometry.bin_spacing != spacing:
        raise ValueError(f"{path}: header does not match geometry")
    return Sinogram(geometry, values)


def write_sinogram_csv(sino: Sinogram, path) -> None:
    np.savetxt(path, sino.values, delimiter=",", fmt="%.17g")
