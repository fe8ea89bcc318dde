"""Analytic phantoms built from layered disks, annuli and elliptic bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridSpec
from .physics import Material, attenuation_at, bundled_material, effective_pair


class PhantomGeometryError(ValueError):
    pass


# relative margin for strict containment: rounding can put the closest point of a
# tangent (or barely missing) ray a few ulps inside the boundary
_SHRINK = 1.0 - 1e-12


def _circle_crossings(origins, directions, center, radius):
    rel = origins - np.asarray(center)
    b = np.einsum("...i,...i->...", rel, directions)
    c = np.einsum("...i,...i->...", rel, rel) - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    s = np.where(disc > 0, s, np.nan)
    return np.stack([-b - s, -b + s], axis=-1)


def _ellipse_crossings(origins, directions, center, a, b):
    scale = np.array([a, b])
    o = (origins - np.asarray(center)) / scale
    d = directions / scale
    A = np.einsum("...i,...i->...", d, d)
    B = np.einsum("...i,...i->...", o, d)
    C = np.einsum("...i,...i->...", o, o) - 1.0
    disc = B * B - A * C
    with np.errstate(invalid="ignore"):
        s = np.sqrt(disc)
    s = np.where(disc > 0, s, np.nan)
    return np.stack([(-B - s) / A, (-B + s) / A], axis=-1)


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise PhantomGeometryError("disk radius must be positive")

    def contains(self, x, y, strict=False):
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return r2 < self.radius ** 2 * _SHRINK if strict else r2 <= self.radius ** 2

    def crossings(self, origins, directions):
        return _circle_crossings(origins, directions, self.center, self.radius)

    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)


@dataclass(frozen=True)
class Annulus:
    center: tuple[float, float]
    r_inner: float
    r_outer: float

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise PhantomGeometryError("annulus needs 0 < r_inner < r_outer")

    def contains(self, x, y, strict=False):
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        if strict:
            return (r2 < self.r_outer ** 2 * _SHRINK) & (r2 > self.r_inner ** 2 / _SHRINK)
        return (r2 <= self.r_outer ** 2) & (r2 >= self.r_inner ** 2)

    def crossings(self, origins, directions):
        return np.concatenate([
            _circle_crossings(origins, directions, self.center, self.r_outer),
            _circle_crossings(origins, directions, self.center, self.r_inner),
        ], axis=-1)

    def bbox(self):
        cx, cy = self.center
        r = self.r_outer
        return (cx - r, cx + r, cy - r, cy + r)


@dataclass(frozen=True)
class EllipseBand:
    """Region between two concentric axis-aligned ellipses, optionally cut to ``y >= y_min``."""

    center: tuple[float, float]
    outer: tuple[float, float]
    inner: tuple[float, float]
    y_min: float | None = None

    def __post_init__(self):
        if not (0 < self.inner[0] < self.outer[0] and 0 < self.inner[1] < self.outer[1]):
            raise PhantomGeometryError("ellipse band needs inner semi-axes inside outer ones")

    def contains(self, x, y, strict=False):
        dx, dy = x - self.center[0], y - self.center[1]
        ro = (dx / self.outer[0]) ** 2 + (dy / self.outer[1]) ** 2
        ri = (dx / self.inner[0]) ** 2 + (dy / self.inner[1]) ** 2
        m = (ro < _SHRINK) & (ri > 1.0 / _SHRINK) if strict else (ro <= 1.0) & (ri >= 1.0)
        if self.y_min is not None:
            m &= (y > self.y_min) if strict else (y >= self.y_min)
        return m

    def crossings(self, origins, directions):
        parts = [
            _ellipse_crossings(origins, directions, self.center, *self.outer),
            _ellipse_crossings(origins, directions, self.center, *self.inner),
        ]
        if self.y_min is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (self.y_min - origins[..., 1]) / directions[..., 1]
            parts.append(np.where(np.isfinite(t), t, np.nan)[..., None])
        return np.concatenate(parts, axis=-1)

    def bbox(self):
        cx, cy = self.center
        a, b = self.outer
        lo = cy - b if self.y_min is None else max(cy - b, self.y_min)
        return (cx - a, cx + a, lo, cy + b)


@dataclass(frozen=True)
class Primitive:
    shape: Disk | Annulus | EllipseBand
    material: Material


@dataclass(frozen=True)
class PhantomSpec:
    """Ordered primitives; where they overlap the later one wins."""

    primitives: tuple[Primitive, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    @property
    def materials(self) -> list[Material]:
        seen = {}
        for p in self.primitives:
            seen.setdefault(p.material.name, p.material)
        return list(seen.values())

    def material_index(self) -> np.ndarray:
        names = [m.name for m in self.materials]
        return np.array([names.index(p.material.name) for p in self.primitives], dtype=int)

    def subset(self, material_names) -> "PhantomSpec":
        names = set(material_names)
        return PhantomSpec(tuple(p for p in self.primitives if p.material.name in names))

    def labels(self, x, y, strict: bool = False) -> np.ndarray:
        """Index of the topmost primitive containing each point, -1 for air.

        ``strict`` treats boundaries as outside (used for chord midpoints, so a
        tangent ray gets no length)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lab = np.full(np.broadcast(x, y).shape, -1, dtype=int)
        for i, p in enumerate(self.primitives):
            lab[p.shape.contains(x, y, strict)] = i
        return lab


@dataclass(frozen=True, eq=False)
class Image:
    grid: GridSpec
    values: np.ndarray
    kind: str = "mu"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"image shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)


def two_disk_phantom(radius: float, separation: float, material: Material) -> PhantomSpec:
    """Equal disks centred at ``(+-separation/2, 0)``."""
    if not separation > 2 * radius:
        raise PhantomGeometryError("disks overlap: separation must exceed 2 * radius")
    h = 0.5 * separation
    return PhantomSpec((Primitive(Disk((-h, 0.0), radius), material),
                        Primitive(Disk((h, 0.0), radius), material)))


def both_disk_radius(separation: float, half_angle: float = math.pi / 18) -> float:
    """Radius for which lines meet both disks exactly within ``+-half_angle`` of the centre line."""
    return 0.5 * separation * math.sin(half_angle)


@dataclass(frozen=True)
class DentalLayout:
    """Where the procedural dental phantom put things (for evaluation)."""

    tooth_centers: np.ndarray
    tooth_radius: float
    crown_indices: tuple[int, ...]
    phantom: PhantomSpec = field(repr=False)


def dental_layout(n_teeth: int = 14, crown_indices=(), grid: GridSpec | None = None,
                  wall_mm: float = 0.8, materials: dict | None = None) -> DentalLayout:
    grid = grid or GridSpec(128, 128, 0.6)
    crown_indices = tuple(sorted(set(int(i) for i in crown_indices)))
    if any(i < 0 or i >= n_teeth for i in crown_indices):
        raise PhantomGeometryError(f"crown indices must lie in [0, {n_teeth})")
    mats = {name: bundled_material(name) for name in ("bone", "enamel", "titanium")}
    mats.update(materials or {})
    H = min(grid.half_extent)
    gx, gy = grid.center
    cx, cy = gx, gy - 0.25 * H
    outer = (0.78 * H, 0.85 * H)
    thick = 0.22 * H
    inner = (outer[0] - thick, outer[1] - thick)
    band = EllipseBand((cx, cy), outer, inner, y_min=cy - 0.15 * H)
    a_m, b_m = outer[0] - 0.5 * thick, outer[1] - 0.5 * thick
    # teeth evenly spaced in arc length along the upper half of the mid ellipse
    th = np.linspace(-0.12, math.pi + 0.12, 2001)
    pts = np.stack([a_m * np.cos(th), b_m * np.sin(th)], axis=1)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    targets = np.linspace(0.0, arc[-1], n_teeth) if n_teeth > 1 else np.array([0.5 * arc[-1]])
    th_t = np.interp(targets, arc, th)
    centers = np.stack([cx + a_m * np.cos(th_t), cy + b_m * np.sin(th_t)], axis=1)
    spacing = arc[-1] / max(n_teeth - 1, 1)
    r_tooth = min(0.42 * spacing, 0.45 * thick)
    prims = [Primitive(band, mats["bone"])]
    prims += [Primitive(Disk(tuple(c), r_tooth), mats["enamel"]) for c in centers]
    for i in crown_indices:
        ring = Annulus(tuple(centers[i]), max(r_tooth - wall_mm, 0.05 * r_tooth), r_tooth)
        prims.append(Primitive(ring, mats["titanium"]))
    return DentalLayout(centers, r_tooth, crown_indices, PhantomSpec(tuple(prims)))


def dental_phantom(n_teeth: int = 14, crown_indices=(), grid: GridSpec | None = None,
                   wall_mm: float = 0.8) -> PhantomSpec:
    """Jaw-arch bone band, enamel teeth along it, titanium crown rings on selected teeth."""
    return dental_layout(n_teeth, crown_indices, grid, wall_mm).phantom


def rasterize(phantom: PhantomSpec, grid: GridSpec, E: float) -> Image:
    X, Y = grid.pixel_centers()
    lab = phantom.labels(X, Y)
    values = np.array([attenuation_at(p.material, E) for p in phantom.primitives] + [0.0])
    return Image(grid, values[lab], "mu")


def rasterize_pair(phantom: PhantomSpec, grid: GridSpec, E0: float, dE: float = 1.0):
    """Ground-truth ``(mu(E0), dmu/dE(E0))`` images."""
    X, Y = grid.pixel_centers()
    lab = phantom.labels(X, Y)
    pairs = [effective_pair(p.material, E0, dE) for p in phantom.primitives]
    mu = np.array([p.mu0 for p in pairs] + [0.0])
    sg = np.array([p.sigma0 for p in pairs] + [0.0])
    return Image(grid, mu[lab], "mu"), Image(grid, sg[lab], "sigma")


def material_mask(phantom: PhantomSpec, grid: GridSpec, material_names) -> np.ndarray:
    X, Y = grid.pixel_centers()
    lab = phantom.labels(X, Y)
    names = set(material_names)
    hit = np.array([p.material.name in names for p in phantom.primitives] + [False])
    return hit[lab]
