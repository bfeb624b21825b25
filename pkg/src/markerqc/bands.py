"""Bloch bands and Wannier functions of the superlattice.

Bloch functions are written psi_k(x) = exp(ikx) sum_G c(G) exp(-iGx) with
reciprocal vectors G = 2 pi n / a.  The Fourier components of the
potential follow the same convention, U(x) = sum_q U~(q) exp(-iqx), so
the Hamiltonian block for quasi-momentum k is

    H[G, G'] = (k - G)^2 delta(G, G') + U~(G - G')

in recoil units (hbar^2 / 2m = 1, kappa = 1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import eval_hermite

from .lattice import LatticeControls, controls_to_amplitudes, evaluate_potential
from .tdse import GridWavefunction, SpatialGrid

DEFAULT_CUTOFF = 64
MIN_CUTOFF = 16


def fourier_potential(c: LatticeControls) -> dict[int, complex]:
    """Nonzero Fourier components U~(q), keyed by q in units of kappa."""
    U0, U1, U2, phi = controls_to_amplitudes(c)
    coeffs = {0: complex(U0), 2: complex(U1 / 2), -2: complex(U1 / 2)}
    if U2 != 0.0:
        coeffs[1] = 0.5 * U2 * complex(math.cos(phi), math.sin(phi))
        coeffs[-1] = coeffs[1].conjugate()
    return coeffs


def natural_lattice_constant(c: LatticeControls) -> float:
    """pi when the pair-b component is off, 2 pi otherwise."""
    return math.pi if controls_to_amplitudes(c)[2] == 0.0 else 2.0 * math.pi


@dataclass(frozen=True)
class BlochProblem:
    controls: LatticeControls
    k: float = 0.0
    cutoff: int = DEFAULT_CUTOFF
    lattice_constant: float | None = None

    def __post_init__(self):
        if self.cutoff < MIN_CUTOFF:
            raise ValueError(f"plane-wave cutoff must be at least {MIN_CUTOFF}, got {self.cutoff}")
        a = self.lattice_constant
        if a is not None:
            if not (math.isclose(a, math.pi) or math.isclose(a, 2 * math.pi)):
                raise ValueError("lattice constant must be pi or 2 pi")
            if math.isclose(a, math.pi) and controls_to_amplitudes(self.controls)[2] != 0.0:
                raise ValueError("a = pi requires U2 = 0")

    @property
    def a(self) -> float:
        return self.lattice_constant or natural_lattice_constant(self.controls)

    @property
    def reciprocal(self) -> np.ndarray:
        """Reciprocal vectors G (units of kappa), cutoff+1 of them, symmetric about 0."""
        half = self.cutoff // 2
        return (2.0 * math.pi / self.a) * np.arange(-half, half + 1)


def bloch_matrix(p: BlochProblem) -> np.ndarray:
    G = p.reciprocal
    U = fourier_potential(p.controls)
    H = np.diag((p.k - G) ** 2).astype(complex)
    # G - G' is an integer multiple of kappa; only |q| <= 2 survive
    diff = np.rint(G[:, None] - G[None, :]).astype(int)
    for q, val in U.items():
        H[diff == q] += val
    return H


def solve_bloch(p: BlochProblem, n_bands: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``n_bands`` energies (ascending) and unit-norm coefficient columns."""
    H = bloch_matrix(p)
    if n_bands > H.shape[0]:
        raise ValueError(f"cutoff {p.cutoff} supports at most {H.shape[0]} bands")
    try:
        E, vecs = linalg.eigh(H, subset_by_index=(0, n_bands - 1))
    except linalg.LinAlgError as exc:
        raise RuntimeError(f"Bloch eigen-solve did not converge at k={p.k}") from exc
    return E, vecs


@dataclass
class BandSolution:
    """Bands of one lattice configuration on the quantized k mesh.

    ``energies[ik, n]`` and ``coeffs[ik, :, n]`` belong to ks[ik];
    ``reciprocal`` lists the plane waves of the coefficient vectors.
    """

    controls: LatticeControls
    a: float
    ks: np.ndarray
    reciprocal: np.ndarray
    energies: np.ndarray
    coeffs: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.ks)

    @property
    def n_bands(self) -> int:
        return self.energies.shape[1]

    def flatness(self) -> np.ndarray:
        """max - min over k of each band."""
        return self.energies.max(axis=0) - self.energies.min(axis=0)

    def bloch_function(self, ik: int, band: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = self.ks[ik]
        c = self.coeffs[ik, :, band]
        phases = np.exp(1j * np.outer(x, k - self.reciprocal))
        return phases @ c

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "band", "energy"])
            for ik, k in enumerate(self.ks):
                for n in range(self.n_bands):
                    w.writerow([repr(float(k)), n, repr(float(self.energies[ik, n]))])
        return path


def quasi_momenta(M: int, a: float) -> np.ndarray:
    """k = 2 pi n / (M a) for n = -M/2 .. M/2 - 1."""
    if M < 2 or M % 2:
        raise ValueError("number of sites M must be even")
    return 2.0 * math.pi * np.arange(-M // 2, M // 2) / (M * a)


def band_structure(c: LatticeControls, M: int = 32, n_bands: int = 4,
                   cutoff: int = DEFAULT_CUTOFF, lattice_constant: float | None = None) -> BandSolution:
    a = lattice_constant or natural_lattice_constant(c)
    ks = quasi_momenta(M, a)
    energies = np.empty((M, n_bands))
    coeffs = None
    G = None
    for ik, k in enumerate(ks):
        p = BlochProblem(c, float(k), cutoff, a)
        E, vecs = solve_bloch(p, n_bands)
        if coeffs is None:
            G = p.reciprocal
            coeffs = np.empty((M, len(G), n_bands), dtype=complex)
        energies[ik] = E
        coeffs[ik] = vecs
    return BandSolution(c, a, ks, G, energies, coeffs)


def converged_cutoff(c: LatticeControls, k: float = 0.0, n_bands: int = 4,
                     start: int = MIN_CUTOFF, tol: float = 1e-8, max_cutoff: int = 1024) -> int:
    """Smallest doubling of the cutoff whose energies move by less than ``tol``."""
    Q = start
    E = solve_bloch(BlochProblem(c, k, Q), n_bands)[0]
    while Q < max_cutoff:
        E2 = solve_bloch(BlochProblem(c, k, 2 * Q), n_bands)[0]
        if np.max(np.abs(E2 - E)) < tol:
            return Q
        Q, E = 2 * Q, E2
    raise RuntimeError(f"band energies not converged to {tol} by cutoff {max_cutoff}")


def _trial_orbital(c: LatticeControls, band: int, site: float, x: np.ndarray, a: float) -> np.ndarray:
    """Harmonic-oscillator orbital of order ``band`` centred on ``site``."""
    h = 1e-4
    curv = float((evaluate_potential(c, site + h) - 2 * evaluate_potential(c, site)
                  + evaluate_potential(c, site - h)) / h ** 2)
    # H = p^2 + U''/2 x^2  ->  omega = sqrt(2 U''), ground state exp(-omega x^2 / 4)
    width = math.sqrt(2.0 / math.sqrt(2.0 * curv)) if curv > 0 else a / 4
    s = (x - site) / width
    return eval_hermite(band, s) * np.exp(-0.5 * s ** 2)


def wannier(bs: BandSolution, band: int, site: float, grid: SpatialGrid) -> GridWavefunction:
    """Wannier function of ``band`` centred on the lattice site at ``site``.

    The phase of each Bloch function is fixed so that its projection on a
    harmonic-oscillator orbital of the same order at ``site`` is real and
    positive (for even bands this is the value at the site).
    """
    if band >= bs.n_bands:
        raise ValueError(f"band {band} not in solution with {bs.n_bands} bands")
    if grid.length > bs.n_sites * bs.a + 1e-9:
        raise ValueError("grid is longer than the Born-von Karman supercell of the band solution")
    local = site + np.linspace(-bs.a, bs.a, 801)
    trial = _trial_orbital(bs.controls, band, site, local, bs.a)
    x = grid.x
    w = np.zeros(grid.n, dtype=complex)
    for ik in range(bs.n_sites):
        proj = np.sum(trial * bs.bloch_function(ik, band, local))
        if abs(proj) < 1e-300:
            raise ValueError(f"Bloch state k={bs.ks[ik]} is orthogonal to the trial orbital")
        gauge = np.conj(proj) / abs(proj)
        w += gauge * bs.bloch_function(ik, band, x)
    w /= math.sqrt(bs.n_sites)
    state = GridWavefunction(w, grid)
    return state.normalized()


def wannier_to_csv(path, state: GridWavefunction) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "re", "im"])
        for x, v in zip(state.grid.x, state.psi):
            wr.writerow([repr(float(x)), repr(float(v.real)), repr(float(v.imag))])
    return path


def instantaneous_levels(c: LatticeControls, n_levels: int = 6, k: float = 0.0,
                         cutoff: int = DEFAULT_CUTOFF) -> tuple[np.ndarray, np.ndarray]:
    """Energies and vectors at one k in the 2 pi cell, used for level tracking.

    The 2 pi cell is kept even when U2 = 0 so that the level count is
    continuous along a transport schedule.
    """
    return solve_bloch(BlochProblem(c, k, cutoff, 2 * math.pi), n_levels)
