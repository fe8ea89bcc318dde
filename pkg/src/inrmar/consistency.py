"""Sinogram range-space analysis and artifact kernels of data inconsistency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fbp import fbp
from .geometry import GridSpec
from .phantoms import Image
from .projector import Sinogram, project_image


class UnsupportedModeError(ValueError):
    pass


def _require_parallel(sino: Sinogram, what: str) -> None:
    if sino.geometry.mode != "parallel":
        raise UnsupportedModeError(f"{what} is defined for parallel-beam sinograms only")


@dataclass(frozen=True, eq=False)
class SinogramDecomposition:
    p_range: Sinogram
    p_perp: Sinogram

    def perp_ratio(self) -> float:
        total = self.p_range.values + self.p_perp.values
        return float(np.linalg.norm(self.p_perp.values) / np.linalg.norm(total))


def consistency_residual(sino: Sinogram, grid: GridSpec) -> SinogramDecomposition:
    """Split ``sino`` into ``R R^-1 sino`` and the remainder outside the range."""
    _require_parallel(sino, "consistency_residual")
    p_range = project_image(fbp(sino, grid), sino.geometry)
    return SinogramDecomposition(p_range, sino.with_values(sino.values - p_range.values))


def moment0(sino: Sinogram) -> np.ndarray:
    """Per-view integral over the detector, ``M(phi) = sum_u P(phi, u) du``."""
    return sino.values.sum(axis=1) * sino.geometry.bin_spacing


def moment0_spread(sino: Sinogram) -> float:
    """Relative max-min spread of the zeroth moment across views."""
    m = moment0(sino)
    scale = np.abs(m).max()
    return 0.0 if scale == 0 else float((m.max() - m.min()) / scale)


def dirac_artifact(view_index: int, bin_index: int, grid: GridSpec, geometry) -> Image:
    """Image response to a unit mismatch in a single sinogram bin."""
    if not (0 <= view_index < geometry.n_views and 0 <= bin_index < geometry.n_bins):
        raise IndexError(f"(view={view_index}, bin={bin_index}) outside {geometry.shape()}")
    one_hot = np.zeros(geometry.shape())
    one_hot[view_index, bin_index] = 1.0
    return artifact_from_mismatch(Sinogram(geometry, one_hot), grid)


def artifact_from_mismatch(mismatch: Sinogram, grid: GridSpec) -> Image:
    """Superposed single-bin artifacts weighted by ``mismatch`` (i.e. its FBP)."""
    _require_parallel(mismatch, "artifact_from_mismatch")
    return fbp(mismatch, grid)
