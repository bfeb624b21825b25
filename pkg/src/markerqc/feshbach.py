"""Magnetically tuned resonances of two atoms in a harmonic trap.

Energies are in units of h*nu (nu: longitudinal trap frequency in Hz) and
times in units of 1/nu, so a state evolves as exp(-2 pi i H t).

The trap-resonance couplings of an isotropic trap follow from the
relative-motion s-wave wavefunctions at the origin.  For a cigar-shaped
trap (transverse frequency gamma*nu) each axial state is expanded in
isotropic s-wave states; the expansion coefficients have a closed form
built from Gauss hypergeometric functions, evaluated here with mpmath
at a working precision that grows with the indices, since the double
sum is strongly alternating.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

import mpmath
import numpy as np
from scipy import linalg

from .units import ATOMIC_MASS_UNIT, BOHR_RADIUS, HBAR, MASS_U

HBAR_HNU = 1.0 / (2.0 * math.pi)  # hbar in units of h*nu times 1/nu

PRESET_KEYS = ("A_bg", "B_beta", "Delta_beta", "s_beta")


@dataclass(frozen=True)
class ResonanceParams:
    """One resonance channel.

    Attributes:
        A_bg: background scattering length in Bohr radii.
        B_res: resonance position in gauss.
        width: resonance width Delta in gauss.
        slope: magnetic moment difference in Hz per gauss.
        label: channel name.
    """

    A_bg: float
    B_res: float
    width: float
    slope: float
    label: str = ""

    def __post_init__(self):
        if self.width == 0:
            raise ValueError("resonance width must be nonzero")
        if self.slope == 0:
            raise ValueError("resonance slope must be nonzero")


@dataclass(frozen=True)
class TrapSpec:
    """Harmonic trap with axial frequency ``nu`` (Hz) and transverse gamma*nu."""

    nu: float
    gamma: float = 1.0
    species: str = "Rb"

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"trap frequency must be positive, got {self.nu}")
        if self.gamma < 1:
            raise ValueError(f"anisotropy gamma must be >= 1, got {self.gamma}")
        if self.species not in MASS_U:
            raise ValueError(f"unknown species {self.species!r}")

    @property
    def alpha(self) -> float:
        """Inverse oscillator length sqrt(m omega / hbar) in 1/m."""
        m = MASS_U[self.species] * ATOMIC_MASS_UNIT
        return math.sqrt(m * 2.0 * math.pi * self.nu / HBAR)

    def a_bg(self, p: ResonanceParams) -> float:
        """Background scattering length in oscillator units."""
        return p.A_bg * BOHR_RADIUS * self.alpha

    def delta(self, p: ResonanceParams) -> float:
        """Width times slope in units of h*nu."""
        return p.width * p.slope / self.nu


# -- presets ------------------------------------------------------------------

def load_presets(path=None) -> dict[str, ResonanceParams]:
    """Read a preset registry (INI sections with A_bg, B_beta, Delta_beta, s_beta).

    Without ``path`` the registry shipped with the package is used.
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is None:
        text = resources.files("markerqc").joinpath("presets.ini").read_text()
        parser.read_string(text)
    else:
        with open(path) as fh:
            parser.read_file(fh)
    out = {}
    for name in parser.sections():
        sec = parser[name]
        missing = [k for k in PRESET_KEYS if k not in sec]
        if missing:
            raise ValueError(f"preset [{name}] lacks keys {missing}")
        extra = sorted(set(sec) - set(PRESET_KEYS))
        if extra:
            raise ValueError(f"preset [{name}] has unknown keys {extra}")
        out[name] = ResonanceParams(sec.getfloat("A_bg"), sec.getfloat("B_beta"),
                                    sec.getfloat("Delta_beta"), sec.getfloat("s_beta"), name)
    return out


def preset(name: str) -> ResonanceParams:
    presets = load_presets()
    try:
        return presets[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(presets)}") from None


# -- closed-form quantities ---------------------------------------------------

def scattering_length(B, p: ResonanceParams):
    """A_bg (1 - Delta / (B - B_res)) in Bohr radii.

    Raises:
        ZeroDivisionError: at the pole B = B_res.
    """
    B = np.asarray(B, dtype=float)
    d = B - p.B_res
    if np.any(d == 0):
        raise ZeroDivisionError(f"scattering length has a pole at B = {p.B_res} G")
    out = p.A_bg * (1.0 - p.width / d)
    return float(out) if out.ndim == 0 else out


def resonance_energy(B, p: ResonanceParams, trap: TrapSpec | None = None):
    """s (B - B_res): in Hz, or in units of h*nu when ``trap`` is given."""
    e = p.slope * (np.asarray(B, dtype=float) - p.B_res)
    if trap is not None:
        e = e / trap.nu
    return float(e) if np.ndim(e) == 0 else e


def coupling_isotropic(v: int, trap: TrapSpec, p: ResonanceParams) -> float:
    """Coupling of s-wave trap level ``v`` to the resonance, in h*nu.

    Raises:
        ValueError: if a_bg * delta is negative.
    """
    if v < 0:
        raise ValueError("level index must be >= 0")
    prod = trap.a_bg(p) * trap.delta(p)
    if prod < 0:
        raise ValueError(f"a_bg * delta = {prod:.3g} < 0 gives no real coupling")
    return 2.0 * math.sqrt(math.sqrt(4 * v + 3) * prod / math.pi)


def calibrated_slope(V0: float, trap: TrapSpec, A_bg: float, width: float) -> float:
    """Slope (Hz/G) for which the v = 0 coupling equals ``V0`` (h*nu)."""
    prod = math.pi * (V0 / 2.0) ** 2 / math.sqrt(3.0)
    a = A_bg * BOHR_RADIUS * trap.alpha
    return prod * trap.nu / (a * width)


# -- cylindrical / spherical overlaps ----------------------------------------

def _dps(w: int, v: int) -> int:
    return 25 + w // 2 + v


@lru_cache(maxsize=64)
def _overlap_table(v: int, w_max: int, gamma: str) -> tuple[float, ...]:
    """<cyl 2v | sph w> for w = 0..w_max, evaluated at one precision."""
    with mpmath.workdps(_dps(w_max, v)):
        g = mpmath.mpf(gamma)
        z = (g - 1) / (g + 1)
        fac = [mpmath.factorial(k) for k in range(2 * (w_max + v) + 3)]
        terms = [[mpmath.mpf(-4) ** (i + j) * mpmath.fac2(2 * i + 2 * j + 1)
                  / (fac[2 * i + 1] * fac[2 * j + 1] * fac[v - j])
                  * mpmath.hyp2f1(j + 0.5, i + j + 1.5, j + 1.5, z)
                  / (g + 1) ** (i + j + 1.5)
                  for j in range(v + 1)] for i in range(w_max + 1)]
        row_sum = [mpmath.fsum(t) for t in terms]
        out = []
        for w in range(w_max + 1):
            pre = (mpmath.mpf(-2) ** (-v)
                   * mpmath.sqrt(g * mpmath.mpf(2) ** (3 - w) * fac[2 * v] * fac[w] * mpmath.fac2(2 * w + 1)))
            s = mpmath.fsum(row_sum[i] / fac[w - i] for i in range(w + 1))
            out.append(float(pre * s))
    return tuple(out)


def overlap_cyl_sph(n: int, w: int, gamma: float) -> float:
    """Overlap of an l = m = 0 cylindrical and spherical oscillator state.

    Args:
        n: axial quantum number of the cylindrical state (transverse
            ground state of frequency gamma*nu).
        w: radial quantum number of the isotropic s-wave state (frequency nu).
        gamma: transverse-to-axial frequency ratio, >= 1.

    Returns:
        The real overlap; exactly 0 for odd ``n`` by parity.
    """
    if n < 0 or w < 0:
        raise ValueError("quantum numbers must be non-negative")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if n % 2:
        return 0.0
    if n > 60 or w > 400:
        raise ValueError("indices beyond the supported range (n <= 60, w <= 400)")
    w_max = max(16, 1 << (w.bit_length()))
    return _overlap_table(n // 2, w_max, repr(float(gamma)))[w]


@dataclass
class CouplingSeries:
    value: float
    terms: np.ndarray
    tail_bound: float


def cigar_coupling_series(n: int, trap: TrapSpec, p: ResonanceParams, w_cutoff: int | None = None,
                          rtol: float = 1e-10, w_limit: int = 400) -> CouplingSeries:
    """Sum_w <cyl n|sph w> V_w(isotropic) with a geometric tail bound.

    The terms decay roughly like ((gamma-1)/(gamma+1))^w; the tail bound
    uses the largest ratio of successive terms over the last eight.

    Raises:
        RuntimeError: if the tail bound stays above ``rtol`` times the sum.
    """
    iso = TrapSpec(trap.nu, 1.0, trap.species)
    if n % 2:
        return CouplingSeries(0.0, np.zeros(1), 0.0)
    w_end = w_cutoff if w_cutoff is not None else 32
    while True:
        w_max = max(16, 1 << (w_end.bit_length()))
        row = np.array(_overlap_table(n // 2, w_max, repr(float(trap.gamma)))[: w_end + 1])
        V = np.array([coupling_isotropic(w, iso, p) for w in range(w_end + 1)])
        terms = row * V
        value = float(np.sum(terms))
        tail = _tail_bound(terms, abs(value))
        if tail <= rtol * abs(value):
            return CouplingSeries(value, terms, tail)
        if w_cutoff is not None or w_end >= w_limit:
            raise RuntimeError(
                f"coupling series for n={n}, gamma={trap.gamma} not converged at w={w_end}: "
                f"tail bound {tail:.3g} vs sum {value:.6g}")
        w_end = min(2 * w_end, w_limit)


def _tail_bound(terms: np.ndarray, scale: float) -> float:
    a = np.abs(terms[-9:])
    if a.max() <= 1e-15 * scale:
        # terms at round-off level (e.g. gamma = 1, where the series terminates)
        return float(a.sum())
    ratios = a[1:] / np.where(a[:-1] == 0, np.inf, a[:-1])
    r = float(np.max(ratios))
    if r >= 1.0:
        return math.inf
    return float(a[-1] * r / (1.0 - r))


def coupling_cigar(n: int, trap: TrapSpec, p: ResonanceParams, w_cutoff: int | None = None,
                   rtol: float = 1e-10) -> float:
    """Coupling of axial level ``n`` of a cigar trap to the resonance, in h*nu."""
    return cigar_coupling_series(n, trap, p, w_cutoff, rtol).value


# -- coupled level model ------------------------------------------------------

@dataclass
class CoupledLevelModel:
    """Resonance level |M> (index 0) coupled to trap levels (indices 1..N).

    ``energies`` are the trap-level energies and ``couplings`` their
    couplings to |M>, all in h*nu.  ``epsilon`` maps a field in gauss
    to the resonance energy in h*nu.
    """

    energies: np.ndarray
    couplings: np.ndarray
    epsilon: Callable[[float], float] | None = None
    params: ResonanceParams | None = None
    trap: TrapSpec | None = None

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.couplings = np.asarray(self.couplings, dtype=float)
        if self.energies.shape != self.couplings.shape or self.energies.ndim != 1:
            raise ValueError("energies and couplings must be 1D arrays of equal length")

    @property
    def dim(self) -> int:
        return len(self.energies) + 1

    def hamiltonian(self, eps: float) -> np.ndarray:
        H = np.zeros((self.dim, self.dim))
        H[0, 0] = eps
        H[1:, 1:] = np.diag(self.energies)
        H[0, 1:] = self.couplings
        H[1:, 0] = self.couplings
        return H

    def eps_of_field(self, B):
        if self.epsilon is None:
            raise ValueError("model has no field dependence")
        return self.epsilon(B)


def build_level_model(N: int, trap: TrapSpec, p: ResonanceParams, geometry: str | None = None,
                      spacing: float | None = None) -> CoupledLevelModel:
    """Resonance plus N trap levels.

    For an isotropic trap (gamma = 1) level v has energy v*spacing with
    spacing 1 by default; for a cigar trap the even axial levels
    n = 2v couple, with energy 2v.

    Args:
        N: number of trap levels, >= 2.
        trap: trap frequencies.
        p: resonance parameters.
        geometry: "isotropic" or "cigar"; inferred from gamma when None.
        spacing: override of the level spacing in h*nu.
    """
    if N < 2:
        raise ValueError("need at least two trap levels")
    geometry = geometry or ("isotropic" if trap.gamma == 1.0 else "cigar")
    if geometry == "isotropic":
        spacing = 1.0 if spacing is None else spacing
        V = [coupling_isotropic(v, trap, p) for v in range(N)]
    elif geometry == "cigar":
        spacing = 2.0 if spacing is None else spacing
        V = [coupling_cigar(2 * v, trap, p) for v in range(N)]
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    energies = spacing * np.arange(N)
    return CoupledLevelModel(energies, np.array(V), lambda B: resonance_energy(B, p, trap), p, trap)


@dataclass
class Spectra:
    """Adiabatic (sorted eigenvalues) and diabatic (diagonal) curves."""

    fields: np.ndarray
    eps: np.ndarray
    adiabatic: np.ndarray
    diabatic: np.ndarray

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["B", "kind", "index", "energy_hnu"])
            for kind, data in (("adiabatic", self.adiabatic), ("diabatic", self.diabatic)):
                for ib, B in enumerate(self.fields):
                    for k, e in enumerate(data[ib]):
                        w.writerow([repr(float(B)), kind, k, repr(float(e))])
        return path

    def crossing_gaps(self) -> list[tuple[float, float]]:
        """(field, minimum gap) of each adjacent adiabatic pair."""
        out = []
        for k in range(self.adiabatic.shape[1] - 1):
            gap = self.adiabatic[:, k + 1] - self.adiabatic[:, k]
            i = int(np.argmin(gap))
            out.append((float(self.fields[i]), float(gap[i])))
        return out


def spectra(model: CoupledLevelModel, fields=None, eps=None) -> Spectra:
    """Eigenvalues along a field grid (gauss) or directly along resonance energies."""
    if (fields is None) == (eps is None):
        raise ValueError("give exactly one of fields or eps")
    if fields is not None:
        fields = np.asarray(fields, dtype=float)
        eps = np.array([model.eps_of_field(B) for B in fields])
    else:
        eps = np.asarray(eps, dtype=float)
        fields = eps.copy()
    ad = np.empty((len(eps), model.dim))
    dia = np.empty((len(eps), model.dim))
    for i, e in enumerate(eps):
        ad[i] = linalg.eigvalsh(model.hamiltonian(e))
        dia[i] = np.concatenate([[e], model.energies])
    return Spectra(fields, eps, ad, dia)


@dataclass
class RampResult:
    """Populations and phases along a ramp sampled at ``times``.

    ``phase`` is the unwrapped phase of the adiabatic eigenstate that
    connects continuously to the initial one, ``bare_phase`` the phase
    of the amplitude in the initially occupied basis level.
    """

    times: np.ndarray
    eps: np.ndarray
    populations: np.ndarray
    phase: np.ndarray
    bare_phase: np.ndarray
    final: np.ndarray = field(repr=False)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "level", "population"])
            for t, row in zip(self.times, self.populations):
                for k, pop in enumerate(row):
                    w.writerow([repr(float(t)), k, repr(float(pop))])
        return path


def step_propagator(H: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """exp(-2 pi i H dt) for real symmetric H, with its eigen-decomposition."""
    E, S = linalg.eigh(H)
    U = (S * np.exp(-2j * math.pi * E * dt)) @ S.T
    return U, E, S


def ramp_dynamics(model: CoupledLevelModel, times, eps, psi0, norm_tol: float = 1e-10) -> RampResult:
    """Propagate the level model through a resonance-energy ramp.

    Args:
        model: coupled level model.
        times: increasing sample times (units of 1/nu).
        eps: resonance energy, either a callable of time or an array of
            values on the step midpoints (length len(times) - 1).
        psi0: initial amplitudes, normalized.
        norm_tol: allowed drift of the norm.

    Raises:
        FloatingPointError: if the norm drifts by more than ``norm_tol``.
    """
    times = np.asarray(times, dtype=float)
    psi = np.asarray(psi0, dtype=complex).copy()
    if psi.shape != (model.dim,):
        raise ValueError(f"initial state must have {model.dim} components")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise ValueError("initial state must be normalized")
    mids = 0.5 * (times[1:] + times[:-1])
    e_mid = np.array([eps(t) for t in mids]) if callable(eps) else np.asarray(eps, dtype=float)
    if e_mid.shape != mids.shape:
        raise ValueError("need one resonance energy per step")
    start = int(np.argmax(np.abs(psi) ** 2))
    pops = np.empty((len(times), model.dim))
    phase = np.empty(len(times))
    bare = np.empty(len(times))
    pops[0] = np.abs(psi) ** 2
    eps0 = e_mid[0] if len(e_mid) else 0.0
    E0, S0 = linalg.eigh(model.hamiltonian(eps0))
    track = int(np.argmax(np.abs(S0.T @ psi)))
    vec = S0[:, track]
    phase[0] = np.angle(np.vdot(vec, psi))
    bare[0] = np.angle(psi[start])
    for k, e in enumerate(e_mid):
        U, _, S = step_propagator(model.hamiltonian(e), times[k + 1] - times[k])
        psi = U @ psi
        ov = S.T @ vec
        j = int(np.argmax(np.abs(ov)))
        vec = S[:, j] * np.sign(ov[j])
        pops[k + 1] = np.abs(psi) ** 2
        phase[k + 1] = np.angle(np.vdot(vec, psi))
        bare[k + 1] = np.angle(psi[start])
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > norm_tol:
        raise FloatingPointError(f"norm drift {drift:.3g} exceeds {norm_tol:.1g}")
    return RampResult(times, np.concatenate([e_mid, e_mid[-1:]]) if len(e_mid) else e_mid,
                      pops, np.unwrap(phase), np.unwrap(bare), psi)


def linear_field_ramp(model: CoupledLevelModel, B_start: float, B_end: float, rate_G_per_ms: float,
                      dt: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Sample times (1/nu) and midpoint resonance energies of a linear field ramp."""
    if model.trap is None or model.params is None:
        raise ValueError("model needs trap and resonance parameters for a field ramp")
    if rate_G_per_ms <= 0:
        raise ValueError("ramp rate must be positive")
    duration_s = abs(B_end - B_start) / (rate_G_per_ms * 1e3)
    T = duration_s * model.trap.nu
    n = max(1, int(math.ceil(T / dt)))
    t = np.linspace(0.0, T, n + 1)
    mids = 0.5 * (t[1:] + t[:-1])
    B = B_start + (B_end - B_start) * mids / T
    return t, np.asarray(model.eps_of_field(B), dtype=float)


def landau_zener_probability(V: float, rate: float) -> float:
    """Diabatic passage probability exp(-2 pi V^2 / (hbar |d eps/dt|)) in h*nu units."""
    return math.exp(-2.0 * math.pi * V ** 2 / (HBAR_HNU * abs(rate)))
