"""Energy-dependent attenuation tables and X-ray spectra."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class EnergyRangeError(ValueError):
    pass


class TableParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    energies: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.atleast_1d(np.asarray(self.energies, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if e.shape != w.shape or e.ndim != 1 or e.size == 0:
            raise ValueError("energies and weights must be matching 1D arrays")
        if np.any(np.diff(e) <= 0):
            raise ValueError("spectrum energies must be strictly increasing")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("spectrum weights must be non-negative and not all zero")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w / w.sum())

    @property
    def mean_energy(self) -> float:
        return float(self.energies @ self.weights)

    @property
    def std_energy(self) -> float:
        m = self.mean_energy
        return float(np.sqrt(((self.energies - m) ** 2) @ self.weights))

    @property
    def effective_half_width(self) -> float:
        """Half-width of the uniform spectrum with the same energy variance."""
        return float(np.sqrt(3.0) * self.std_energy)

    def __len__(self):
        return self.energies.size


@dataclass(frozen=True, eq=False)
class Material:
    """Tabulated linear attenuation ``mu(E)`` in mm^-1.

    ``interpolation`` is ``"loglog"`` (the default, for physical tables) or
    ``"linear"`` (for synthetic materials with exactly affine ``mu(E)``).
    """

    name: str
    energies: np.ndarray
    mu: np.ndarray
    interpolation: str = "loglog"

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        m = np.asarray(self.mu, dtype=float)
        if e.shape != m.shape or e.ndim != 1 or e.size == 0:
            raise ValueError("material table must be two matching 1D columns")
        if np.any(np.diff(e) <= 0):
            raise ValueError(f"{self.name}: table energies must be strictly increasing")
        if np.any(m < 0):
            raise ValueError(f"{self.name}: attenuation must be non-negative")
        if self.interpolation not in ("loglog", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "loglog" and np.any(m <= 0) and e.size > 1:
            raise ValueError(f"{self.name}: log-log tables need strictly positive mu")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "mu", m)

    @property
    def e_range(self) -> tuple[float, float]:
        return float(self.energies[0]), float(self.energies[-1])

    def covers(self, E) -> bool:
        E = np.asarray(E, dtype=float)
        lo, hi = self.e_range
        return bool(np.all((E >= lo) & (E <= hi)))

    def __repr__(self):
        return f"Material({self.name!r}, {self.e_range[0]:g}-{self.e_range[1]:g} keV)"


@dataclass(frozen=True)
class EnergyPair:
    mu0: float
    sigma0: float


def attenuation_at(material: Material, E):
    """``mu(E)`` by log-log (or linear) interpolation; exact at knots."""
    E_arr = np.asarray(E, dtype=float)
    if not material.covers(E_arr):
        lo, hi = material.e_range
        raise EnergyRangeError(f"{material.name}: energy outside table range [{lo}, {hi}] keV")
    e, m = material.energies, material.mu
    if e.size == 1:
        out = np.full(E_arr.shape, m[0])
    elif material.interpolation == "linear":
        out = np.interp(E_arr, e, m)
    else:
        idx = np.clip(np.searchsorted(e, E_arr, side="right") - 1, 0, e.size - 2)
        e0, e1 = e[idx], e[idx + 1]
        m0, m1 = m[idx], m[idx + 1]
        frac = np.log(E_arr / e0) / np.log(e1 / e0)
        out = np.exp(np.log(m0) + frac * (np.log(m1) - np.log(m0)))
        # knots are returned verbatim
        exact = e[np.clip(np.searchsorted(e, E_arr), 0, e.size - 1)] == E_arr
        out = np.where(exact, m[np.clip(np.searchsorted(e, E_arr), 0, e.size - 1)], out)
    return float(out) if np.ndim(E) == 0 else out


def effective_pair(material: Material, E0: float, dE: float = 1.0) -> EnergyPair:
    mu0 = attenuation_at(material, E0)
    sigma0 = (attenuation_at(material, E0 + dE) - attenuation_at(material, E0 - dE)) / (2.0 * dE)
    return EnergyPair(float(mu0), float(sigma0))


def constant_material(name: str, value: float, e_range=(1.0, 1000.0)) -> Material:
    return Material(name, np.array(e_range, dtype=float), np.array([value, value]), "linear")


def linear_material(name: str, mu0: float, sigma0: float, E0: float, half_width: float) -> Material:
    """Material with exactly affine ``mu(E) = mu0 + sigma0 (E - E0)`` on ``E0 +- half_width``."""
    e = np.array([E0 - half_width, E0 + half_width])
    return Material(name, e, mu0 + sigma0 * (e - E0), "linear")


def make_bichromatic(E1: float, E2: float, w1: float) -> Spectrum:
    if not E1 < E2:
        raise ValueError("need E1 < E2")
    if not 0.0 <= w1 <= 1.0:
        raise ValueError("w1 must lie in [0, 1]")
    return Spectrum(np.array([E1, E2]), np.array([w1, 1.0 - w1]))


def make_uniform(E0: float, half_width: float, n_lines: int, placement: str = "endpoints") -> Spectrum:
    """Equal-weight lines over ``[E0 - half_width, E0 + half_width]``.

    ``placement="endpoints"`` spaces lines from edge to edge; ``"cells"``
    puts one line at the centre of each of ``n_lines`` equal cells, which is
    the midpoint-rule discretisation of the continuous uniform density.
    """
    if n_lines < 2 or not half_width > 0:
        raise ValueError("need n_lines >= 2 and half_width > 0")
    if placement == "endpoints":
        e = np.linspace(E0 - half_width, E0 + half_width, n_lines)
    elif placement == "cells":
        h = 2.0 * half_width / n_lines
        e = E0 - half_width + (np.arange(n_lines) + 0.5) * h
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return Spectrum(e, np.full(n_lines, 1.0 / n_lines))


def make_uniform_gauss(E0: float, half_width: float, n_nodes: int = 64) -> Spectrum:
    """Gauss-Legendre lines for the continuous uniform density (spectrally exact for smooth integrands)."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return Spectrum(E0 + half_width * x, w)


def _read_two_columns(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TableParseError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            e, v = float(parts[0]), float(parts[1])
        except ValueError:
            raise TableParseError(f"{path}:{lineno}: non-numeric value") from None
        if v < 0 or not np.isfinite(v) or not np.isfinite(e):
            raise TableParseError(f"{path}:{lineno}: values must be finite and non-negative")
        if rows and e <= rows[-1][0]:
            raise TableParseError(f"{path}:{lineno}: energies must be strictly increasing")
        rows.append((e, v))
    if not rows:
        raise TableParseError(f"{path}: no data rows")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


def load_spectrum(path) -> Spectrum:
    e, w = _read_two_columns(path)
    if w.sum() <= 0:
        raise TableParseError(f"{path}: weights sum to zero")
    return Spectrum(e, w)


def load_material(path, name: str | None = None) -> Material:
    e, m = _read_two_columns(path)
    return Material(name or Path(path).stem, e, m)


def data_path(filename: str) -> Path:
    return Path(resources.files("inrmar") / "data" / filename)


BUNDLED_MATERIALS = ("water", "bone", "enamel", "titanium")


def bundled_material(name: str) -> Material:
    if name not in BUNDLED_MATERIALS:
        raise KeyError(f"no bundled material {name!r}; choose from {BUNDLED_MATERIALS}")
    return load_material(data_path(f"{name}.txt"), name)


def bundled_spectrum() -> Spectrum:
    """The shipped 100 kVp tungsten-anode-like spectrum."""
    return load_spectrum(data_path("spectrum_100kvp.txt"))


def toy_metal() -> Material:
    """Two-knot metal: 64 mm^-1 at 64 keV, 5 mm^-1 at 80 keV."""
    return Material("toy_metal", np.array([64.0, 80.0]), np.array([64.0, 5.0]))
