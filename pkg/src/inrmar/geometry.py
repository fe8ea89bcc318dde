"""Scan geometries, rays and the reconstruction pixel lattice.

Conventions (2D, millimetres):

* view angle ``phi`` gives the central ray direction ``(sin phi, -cos phi)``;
* detector axis ``e_u = (cos phi, sin phi)``; a parallel ray with detector
  coordinate ``u`` is the line ``{x : x . e_u = u}``;
* a fan ray with fan angle ``gamma = u / source_axis_distance`` starts at the
  source ``-SAD * (sin phi, -cos phi)`` and points along
  ``(sin(phi + gamma), -cos(phi + gamma))``, i.e. it coincides with the
  parallel ray ``(phi + gamma, SAD * sin(gamma))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """``nx`` columns by ``ny`` rows of square pixels centred on ``center``.

    Image arrays are indexed ``[row, col]`` with row 0 at the lowest ``y``.
    """

    nx: int
    ny: int
    pixel_mm: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise GeometryError("grid needs at least one pixel per axis")
        if not self.pixel_mm > 0:
            raise GeometryError("pixel_mm must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def half_extent(self) -> tuple[float, float]:
        return (0.5 * self.nx * self.pixel_mm, 0.5 * self.ny * self.pixel_mm)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        hx, hy = self.half_extent
        cx, cy = self.center
        return (cx - hx, cx + hx, cy - hy, cy + hy)

    @property
    def circumradius(self) -> float:
        return math.hypot(*self.half_extent)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """World coordinates ``(X, Y)`` of pixel centres, each of shape ``(ny, nx)``."""
        x0, _, y0, _ = self.bounds
        xs = x0 + (np.arange(self.nx) + 0.5) * self.pixel_mm
        ys = y0 + (np.arange(self.ny) + 0.5) * self.pixel_mm
        return np.meshgrid(xs, ys)

    def normalize(self, points: np.ndarray) -> np.ndarray:
        """Map world points so that the grid box becomes ``[-1, 1]^2``."""
        hx, hy = self.half_extent
        scale = np.array([hx, hy])
        return (np.asarray(points, dtype=float) - np.asarray(self.center)) / scale


@dataclass(frozen=True)
class ScanGeometry:
    mode: str
    n_views: int
    n_bins: int
    bin_spacing: float
    angular_range: tuple[float, float] = (0.0, math.pi)
    source_axis_distance: float | None = None
    detector_u_offset: float = 0.0
    out_of_plane_slope: float = 0.0

    def __post_init__(self):
        if self.mode not in ("parallel", "fan"):
            raise GeometryError(f"unknown geometry mode {self.mode!r}")
        if self.n_views < 1 or self.n_bins < 1:
            raise GeometryError("n_views and n_bins must be >= 1")
        if not self.bin_spacing > 0:
            raise GeometryError("bin_spacing must be positive")
        if self.out_of_plane_slope != 0:
            raise GeometryError("only the in-plane (v = 0) geometry is supported")
        if self.mode == "fan" and not (self.source_axis_distance and self.source_axis_distance > 0):
            raise GeometryError("fan mode needs a positive source_axis_distance")

    @property
    def angles(self) -> np.ndarray:
        start, end = self.angular_range
        return start + np.arange(self.n_views) * (end - start) / self.n_views

    @property
    def u(self) -> np.ndarray:
        """Detector coordinate of each bin centre (mm at the rotation axis)."""
        return (np.arange(self.n_bins) - 0.5 * (self.n_bins - 1)) * self.bin_spacing + self.detector_u_offset

    @property
    def reach(self) -> float:
        """Half-length of the region every ray must cover."""
        if self.mode == "parallel":
            return 0.5 * self.n_bins * self.bin_spacing + abs(self.detector_u_offset)
        return float(self.source_axis_distance)

    def check_grid(self, grid: GridSpec) -> None:
        if self.mode == "fan" and self.source_axis_distance <= grid.circumradius:
            raise GeometryError("source circle must enclose the grid")

    def shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_bins)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_views": self.n_views,
            "n_bins": self.n_bins,
            "bin_spacing": self.bin_spacing,
            "angular_range": list(self.angular_range),
            "source_axis_distance": self.source_axis_distance,
            "detector_u_offset": self.detector_u_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGeometry":
        d = dict(d)
        d["angular_range"] = tuple(d.get("angular_range", (0.0, math.pi)))
        return cls(**d)


def default_parallel(grid: GridSpec, n_views: int = 360, n_bins: int = 600) -> ScanGeometry:
    """Parallel geometry over [0, pi) whose detector spans the grid diagonal plus 4 bins."""
    diag = 2.0 * grid.circumradius
    spacing = diag / (n_bins - 4)
    return ScanGeometry("parallel", n_views, n_bins, spacing, (0.0, math.pi))


def default_fan(grid: GridSpec, n_views: int = 360, n_bins: int = 600,
                source_axis_distance: float = 500.0) -> ScanGeometry:
    """Full-turn equiangular fan geometry covering the grid's circumcircle."""
    half_fan = math.asin(grid.circumradius / source_axis_distance)
    spacing = 2.0 * half_fan * source_axis_distance / (n_bins - 4)
    return ScanGeometry("fan", n_views, n_bins, spacing, (0.0, 2 * math.pi), source_axis_distance)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_range: tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def length(self) -> float:
        return max(self.t_range[1] - self.t_range[0], 0.0)

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.origin + t[..., None] * self.direction


def ray_arrays(geometry: ScanGeometry) -> tuple[np.ndarray, np.ndarray, float]:
    """Origins and unit directions for every ray, each ``(n_views, n_bins, 2)``.

    The third value is the parametric length that carries every ray across the
    region of radius ``geometry.reach`` around the rotation axis.
    """
    phi = geometry.angles[:, None]
    u = geometry.u[None, :]
    if geometry.mode == "parallel":
        d = np.stack(np.broadcast_arrays(np.sin(phi), -np.cos(phi)), axis=-1)
        d = np.broadcast_to(d, (geometry.n_views, geometry.n_bins, 2))
        e_u = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        R = geometry.reach
        origins = u[..., None] * e_u - R * d
        return origins, np.ascontiguousarray(d), 2.0 * R
    sad = geometry.source_axis_distance
    gamma = u / sad
    src = np.stack([-sad * np.sin(phi), sad * np.cos(phi)], axis=-1)
    origins = np.broadcast_to(src, (geometry.n_views, geometry.n_bins, 2))
    d = np.stack([np.sin(phi + gamma), -np.cos(phi + gamma)], axis=-1)
    return np.ascontiguousarray(origins), d, 2.0 * sad


def ray_for_bin(geometry: ScanGeometry, view_index: int, bin_index: int) -> Ray:
    if not (0 <= view_index < geometry.n_views and 0 <= bin_index < geometry.n_bins):
        raise IndexError(f"(view={view_index}, bin={bin_index}) outside {geometry.shape()}")
    phi = geometry.angles[view_index]
    u = geometry.u[bin_index]
    if geometry.mode == "parallel":
        d = np.array([math.sin(phi), -math.cos(phi)])
        e_u = np.array([math.cos(phi), math.sin(phi)])
        R = geometry.reach
        return Ray(u * e_u - R * d, d, (0.0, 2.0 * R))
    sad = geometry.source_axis_distance
    gamma = u / sad
    o = np.array([-sad * math.sin(phi), sad * math.cos(phi)])
    d = np.array([math.sin(phi + gamma), -math.cos(phi + gamma)])
    return Ray(o, d, (0.0, 2.0 * sad))


def clip_arrays(origins: np.ndarray, directions: np.ndarray, grid: GridSpec):
    """Vectorised slab test: entry/exit parameters of rays in the grid box.

    Rays that miss get ``t0 == t1 == 0``.
    """
    x0, x1, y0, y1 = grid.bounds
    lo = np.array([x0, y0])
    hi = np.array([x1, y1])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        ta = (lo - origins) * inv
        tb = (hi - origins) * inv
    tmin = np.minimum(ta, tb)
    tmax = np.maximum(ta, tb)
    # axis-parallel rays: inside slab -> unbounded, outside -> empty
    par = directions == 0
    inside = (origins >= lo) & (origins <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    t0 = np.maximum(tmin.max(axis=-1), 0.0)
    t1 = tmax.min(axis=-1)
    hit = t1 > t0
    return np.where(hit, t0, 0.0), np.where(hit, t1, 0.0)


def clip_to_grid(ray: Ray, grid: GridSpec) -> Ray:
    t0, t1 = clip_arrays(ray.origin[None], ray.direction[None], grid)
    return Ray(ray.origin, ray.direction, (float(t0[0]), float(t1[0])))


def sample_points(ray: Ray, n_samples: int, jitter: bool = False, rng_seed: int = 0):
    """Midpoint (or stratified-jittered) samples over the ray's t-range.

    Returns ``(points, dt)`` with ``n_samples * dt == L``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    L = ray.length
    if L <= 0:
        raise ValueError("cannot sample a ray of zero length")
    dt = L / n_samples
    offs = np.full(n_samples, 0.5)
    if jitter:
        offs = np.random.default_rng(rng_seed).random(n_samples)
    t = ray.t_range[0] + (np.arange(n_samples) + offs) * dt
    return ray.at(t), dt
