"""The 3x3 bichromatic toy problem: nine unit-weight line sums over a 3x3 image
with two metal pixels, and its minimum-norm least-squares reconstruction."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .physics import Spectrum, attenuation_at, make_bichromatic, toy_metal
from .projector import poly_from_lengths

# cells (row, col), 1-based, crossed by each ray, in listing order:
# three phi=0 columns, three phi=pi/4 diagonals, three phi=pi/2 rows
TOY_RAYS = (
    ((1, 1), (2, 1), (3, 1)),
    ((1, 2), (2, 2), (3, 2)),
    ((1, 3), (2, 3), (3, 3)),
    ((2, 1), (3, 2)),
    ((1, 1), (2, 2), (3, 3)),
    ((1, 2), (2, 3)),
    ((3, 1), (3, 2), (3, 3)),
    ((2, 1), (2, 2), (2, 3)),
    ((1, 1), (1, 2), (1, 3)),
)
TOY_LABELS = ("P(0,1)", "P(0,2)", "P(0,3)", "P(pi/4,1)", "P(pi/4,2)", "P(pi/4,3)",
              "P(pi/2,1)", "P(pi/2,2)", "P(pi/2,3)")
METAL_CELLS = ((2, 1), (2, 3))
PRINTED_SOLUTION = np.array([[-1.0, 2.2, 0.4], [6.8, 2.5, 6.3], [0.2, -0.5, 0.7]])


@dataclass(frozen=True, eq=False)
class ToySystem:
    A: np.ndarray
    P: np.ndarray
    metal_cells: tuple
    spectrum: Spectrum

    def __post_init__(self):
        if self.A.shape != (9, 9) or self.P.shape != (9,):
            raise ValueError("toy system is 9 x 9")


def toy_matrix() -> np.ndarray:
    A = np.zeros((9, 9))
    for r, cells in enumerate(TOY_RAYS):
        for i, j in cells:
            A[r, 3 * (i - 1) + (j - 1)] = 1.0
    return A


def build_toy(spectrum: Spectrum | None = None) -> ToySystem:
    """Rays see the metal for one unit of length per metal cell crossed."""
    spectrum = spectrum or make_bichromatic(64.0, 80.0, 0.5)
    A = toy_matrix()
    metal = np.zeros(9)
    for i, j in METAL_CELLS:
        metal[3 * (i - 1) + (j - 1)] = 1.0
    lengths = (A @ metal)[:, None]
    mu = np.atleast_1d(attenuation_at(toy_metal(), spectrum.energies))[None, :]
    P = poly_from_lengths(lengths, mu, spectrum)
    return ToySystem(A, P + 0.0, METAL_CELLS, spectrum)


def solve_min_norm(system: ToySystem, P: np.ndarray | None = None, rcond: float = 1e-10) -> np.ndarray:
    """Pseudo-inverse solution, singular values below ``rcond * s_max`` dropped."""
    P = system.P if P is None else np.asarray(P, dtype=float)
    U, s, Vt = np.linalg.svd(system.A)
    keep = s > rcond * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ P) / s[keep])


def mismatch(system: ToySystem) -> float:
    """``P(pi/2, 2) - 2 P(0, 1)``: zero for a monochromatic beam."""
    return float(system.P[7] - 2.0 * system.P[0])


def toy_report(system: ToySystem) -> str:
    A, P = system.A, system.P
    sol = solve_min_norm(system)
    resid = float(np.linalg.norm(A @ sol - P))
    rank = int(np.linalg.matrix_rank(A))
    printed_resid = float(np.linalg.norm(A @ PRINTED_SOLUTION.ravel() - P))
    dev = float(np.abs(sol.reshape(3, 3) - PRINTED_SOLUTION).max())
    buf = io.StringIO()
    buf.write("# toy bichromatic system\n")
    buf.write("ray," + ",".join(f"mu{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)) + ",P\n")
    for label, row, p in zip(TOY_LABELS, A, P):
        buf.write(label + "," + ",".join(str(int(v)) for v in row) + f",{p:.6f}\n")
    buf.write("\n# minimum-norm least-squares solution (rows of the 3x3 image)\n")
    for r in sol.reshape(3, 3):
        buf.write(",".join(f"{v:.4f}" for v in r) + "\n")
    buf.write(f"\nrank(A),{rank}\n")
    buf.write(f"residual,{resid:.6f}\n")
    buf.write(f"mismatch P(pi/2,2)-2P(0,1),{mismatch(system):.6f}\n")
    buf.write(f"max |solution - printed|,{dev:.4f}\n")
    if dev > 0.1:
        buf.write("# discrepancy: the printed 3x3 matrix is not reproduced.\n")
        buf.write(f"# A is rank {rank} (column sums and row sums share the total), so (A^T A)^-1 does not exist;\n")
        buf.write("# the pseudo-inverse gives the unique minimum-norm least-squares solution above.\n")
        buf.write(f"# the printed matrix has residual {printed_resid:.4f} > {resid:.4f}, so it is not a\n")
        buf.write("# least-squares solution of the listed unit-weight system.\n")
    return buf.getvalue()
