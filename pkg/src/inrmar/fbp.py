"""Ram-Lak filtered backprojection for parallel and equiangular fan data."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .geometry import GridSpec
from .phantoms import Image
from .projector import Sinogram


def _padded_size(n: int) -> int:
    return max(64, 2 * int(2 ** math.ceil(math.log2(n))))


def ramlak_kernel(n_pad: int, spacing: float, fan_angle: bool = False) -> np.ndarray:
    """Spatial Ram-Lak kernel on a circular grid of ``n_pad`` taps.

    With ``fan_angle`` the odd taps use ``sin(n * spacing)`` (equiangular
    fan kernel, ``spacing`` in radians).
    """
    n = np.concatenate([np.arange(0, n_pad // 2 + 1), np.arange(-(n_pad // 2) + 1, 0)])
    h = np.zeros(n_pad)
    h[0] = 1.0 / (4.0 * spacing ** 2)
    odd = n % 2 == 1
    if fan_angle:
        h[odd] = -1.0 / (math.pi ** 2 * np.sin(n[odd] * spacing) ** 2)
    else:
        h[odd] = -1.0 / (math.pi ** 2 * (n[odd] * spacing) ** 2)
    return h


def ramp_filter(values: np.ndarray, spacing: float, fan_angle: bool = False) -> np.ndarray:
    """Filter each row (view) with the Ram-Lak kernel via zero-padded FFT."""
    n_bins = values.shape[-1]
    n_pad = _padded_size(n_bins)
    H = np.fft.rfft(ramlak_kernel(n_pad, spacing, fan_angle))
    F = np.fft.rfft(values, n=n_pad, axis=-1)
    return np.fft.irfft(F * H, n=n_pad, axis=-1)[..., :n_bins] * spacing


@njit(cache=True)
def _backproject_parallel(q, angles, u0, du, xs, ys):
    ny, nx = ys.size, xs.size
    nb = q.shape[1]
    out = np.zeros((ny, nx))
    for k in range(angles.size):
        c = np.cos(angles[k])
        s = np.sin(angles[k])
        row = q[k]
        for i in range(ny):
            base = ys[i] * s - u0
            for j in range(nx):
                pos = (xs[j] * c + base) / du
                i0 = int(np.floor(pos))
                a = pos - i0
                v = 0.0
                if 0 <= i0 < nb:
                    v += (1.0 - a) * row[i0]
                if 0 <= i0 + 1 < nb:
                    v += a * row[i0 + 1]
                out[i, j] += v
    return out


@njit(cache=True)
def _backproject_fan(q, angles, g0, alpha, sad, xs, ys):
    ny, nx = ys.size, xs.size
    nb = q.shape[1]
    out = np.zeros((ny, nx))
    for k in range(angles.size):
        dcx = np.sin(angles[k])
        dcy = -np.cos(angles[k])
        row = q[k]
        for i in range(ny):
            vy = ys[i] + sad * dcy
            for j in range(nx):
                vx = xs[j] + sad * dcx
                L2 = vx * vx + vy * vy
                gp = np.arctan2(dcx * vy - dcy * vx, dcx * vx + dcy * vy)
                pos = (gp - g0) / alpha
                i0 = int(np.floor(pos))
                a = pos - i0
                v = 0.0
                if 0 <= i0 < nb:
                    v += (1.0 - a) * row[i0]
                if 0 <= i0 + 1 < nb:
                    v += a * row[i0 + 1]
                out[i, j] += v / L2
    return out


def _axes(grid: GridSpec):
    x0, _, y0, _ = grid.bounds
    xs = x0 + (np.arange(grid.nx) + 0.5) * grid.pixel_mm
    ys = y0 + (np.arange(grid.ny) + 0.5) * grid.pixel_mm
    return xs, ys


def fbp(sino: Sinogram, grid: GridSpec) -> Image:
    """Ram-Lak FBP with linear-interpolation backprojection onto ``grid``."""
    g = sino.geometry
    if g.mode == "parallel":
        return Image(grid, _fbp_parallel(sino, grid), "mu")
    return Image(grid, _fbp_fan(sino, grid), "mu")


def _fbp_parallel(sino: Sinogram, grid: GridSpec) -> np.ndarray:
    g = sino.geometry
    q = np.ascontiguousarray(ramp_filter(sino.values, g.bin_spacing))
    xs, ys = _axes(grid)
    out = _backproject_parallel(q, g.angles, float(g.u[0]), g.bin_spacing, xs, ys)
    # each line is seen once per half-turn
    return out * (math.pi / g.n_views)


def _fbp_fan(sino: Sinogram, grid: GridSpec) -> np.ndarray:
    g = sino.geometry
    sad = g.source_axis_distance
    alpha = g.bin_spacing / sad
    gamma = g.u / sad
    weighted = sino.values * (sad * np.cos(gamma))[None, :]
    q = np.ascontiguousarray(ramp_filter(weighted, alpha, fan_angle=True))
    xs, ys = _axes(grid)
    out = _backproject_fan(q, g.angles, float(gamma[0]), alpha, sad, xs, ys)
    # a full turn measures every line twice
    span = g.angular_range[1] - g.angular_range[0]
    return out * (0.5 * span / g.n_views) * (2 * math.pi / span)
