"""Species data and conversions between lattice units and SI.

Inside the package every lattice quantity is dimensionless: energies in
recoil units E_r = hbar^2 kappa^2 / 2m, times in 1/omega_r, lengths in
1/kappa.  SI values only appear at the command-line boundary.
"""

from __future__ import annotations

import math

# recoil frequencies omega_r / 2pi in Hz
RECOIL_FREQUENCY_HZ = {
    "Rb": 3.8e3,
    "Na": 25.0e3,
}

HBAR = 1.054571817e-34
H_PLANCK = 6.62607015e-34
ATOMIC_MASS_UNIT = 1.66053906660e-27
BOHR_RADIUS = 5.29177210903e-11
BOHR_MAGNETON_HZ_PER_G = 1.39962449e6

MASS_U = {
    "Rb": 86.909180527,
    "Na": 22.989769282,
}


def recoil_omega(species: str) -> float:
    """Angular recoil frequency omega_r in rad/s."""
    try:
        return 2.0 * math.pi * RECOIL_FREQUENCY_HZ[species]
    except KeyError:
        raise ValueError(f"unknown species {species!r}; known: {sorted(RECOIL_FREQUENCY_HZ)}") from None


def lattice_time_to_seconds(t: float, species: str) -> float:
    return t / recoil_omega(species)


def seconds_to_lattice_time(t: float, species: str) -> float:
    return t * recoil_omega(species)
