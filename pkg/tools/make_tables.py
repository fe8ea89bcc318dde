"""Regenerate the bundled attenuation and spectrum tables.

Needs ``xraydb`` (not a runtime dependency). Output goes to src/inrmar/data.
"""
from pathlib import Path

import numpy as np
import xraydb

OUT = Path(__file__).resolve().parents[1] / "src" / "inrmar" / "data"

# mass fractions, ICRU-44 cortical bone
CORTICAL_BONE = {"H": 0.034, "C": 0.155, "N": 0.042, "O": 0.435, "Na": 0.001,
                 "Mg": 0.002, "P": 0.103, "S": 0.003, "Ca": 0.225}

MATERIALS = {
    "water": ("H2O", 1.0, "water-like soft tissue"),
    "bone": (None, 1.92, "cortical bone (ICRU-44 composition)"),
    "enamel": ("Ca10(PO4)6(OH)2", 2.9, "enamel, modelled as hydroxyapatite"),
    "titanium": ("Ti", 4.506, "titanium"),
}


def mu_per_mm(formula, density, energies_ev):
    if formula is None:
        mass = sum(w * xraydb.mu_elam(el, energies_ev) for el, w in CORTICAL_BONE.items())
        return mass * density / 10.0
    return xraydb.material_mu(formula, energies_ev, density=density) / 10.0


def write_materials():
    energies = np.arange(20.0, 121.0, 5.0)
    for name, (formula, rho, label) in MATERIALS.items():
        mu = mu_per_mm(formula, rho, energies * 1e3)
        lines = [f"# {label}, density {rho} g/cm3",
                 "# linear attenuation from xraydb (Elam/NIST-derived cross sections)",
                 "# columns: energy_keV  mu_per_mm"]
        lines += [f"{e:6.1f}  {m:.8e}" for e, m in zip(energies, mu)]
        (OUT / f"{name}.txt").write_text("\n".join(lines) + "\n")


def write_spectrum(kvp=100.0, al_mm=2.5, cu_mm=0.1):
    # Kramers continuum with W K-lines, Al + Cu filtration, photon-count weights
    energies = np.arange(20.0, kvp + 1.0, 1.0)
    continuum = np.clip(kvp - energies, 0.0, None) / energies
    for line_kev, rel in ((59.0, 0.06), (67.0, 0.02)):
        continuum[np.argmin(abs(energies - line_kev))] += rel * continuum.sum()
    ev = energies * 1e3
    filt = np.exp(-xraydb.material_mu("Al", ev, density=2.70) / 10.0 * al_mm
                  - xraydb.material_mu("Cu", ev, density=8.96) / 10.0 * cu_mm)
    weights = continuum * filt
    weights /= weights.sum()
    lines = [f"# {kvp:.0f} kVp tungsten-anode-like spectrum: Kramers continuum, W K-lines,",
             f"# {al_mm} mm Al + {cu_mm} mm Cu filtration; photon-fraction weights",
             "# columns: energy_keV  weight"]
    lines += [f"{e:6.1f}  {w:.10e}" for e, w in zip(energies, weights)]
    (OUT / "spectrum_100kvp.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write_materials()
    write_spectrum()
