"""Single-site marker transport in the superlattice.

One elementary step moves the marker from the ground state of its well
into the first excited state of a neighbouring well (or back).  The
schedule has four stages between t0 < t1 < t2 < t3 < t4:

(i)   t0..t1  raise the marker well past the neighbour's first excited level,
(ii)  t1..t2  lower the barrier between the wells while lowering the well,
(iii) t2..t3  restore the barrier,
(iv)  t3..t4  return to the symmetric lattice.

The register atom sits in the neighbouring well throughout and is only a
spectator.  Marker sites are at x = (2j + 1/2) pi.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bands import band_structure, instantaneous_levels, wannier
from .lattice import LatticeControls, PulseSchedule
from .tdse import SpatialGrid, propagate
from .units import lattice_time_to_seconds

log = logging.getLogger(__name__)

DIRECTIONS = ("right", "left")
LEGS = ("ground->excited", "excited->ground")

MARKER_SITE = 0.5 * math.pi

# (direction, leg) -> (sigma, l, orientation)
_RULES = {
    ("right", "ground->excited"): (1, 0, "forward"),
    ("right", "excited->ground"): (-1, 1, "backward"),
    ("left", "ground->excited"): (-1, 1, "forward"),
    ("left", "excited->ground"): (1, 0, "backward"),
}


class LevelCrossingError(RuntimeError):
    """The tracked level meets another level along the schedule."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class StepSpec:
    direction: str
    leg: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.leg not in LEGS:
            raise ValueError(f"leg must be one of {LEGS}, got {self.leg!r}")

    @property
    def sigma(self) -> int:
        return _RULES[(self.direction, self.leg)][0]

    @property
    def l(self) -> int:
        return _RULES[(self.direction, self.leg)][1]

    @property
    def orientation(self) -> str:
        return _RULES[(self.direction, self.leg)][2]


def step_config(direction: str, leg: str) -> tuple[int, int, str]:
    """Sign sigma, barrier parity l and time orientation for one step.

    Args:
        direction: "right" or "left".
        leg: "ground->excited" or "excited->ground".

    Returns:
        (sigma, l, orientation) with orientation "forward" or "backward".
    """
    spec = StepSpec(direction, leg)
    return spec.sigma, spec.l, spec.orientation


def _raised_cosine(t: np.ndarray, knots, values) -> np.ndarray:
    out = np.empty_like(t)
    for i in range(len(knots) - 1):
        a, b = knots[i], knots[i + 1]
        m = (t >= a) & (t <= b)
        s = (t[m] - a) / (b - a)
        out[m] = values[i] + (values[i + 1] - values[i]) * 0.5 * (1.0 - np.cos(np.pi * s))
    return out


@dataclass(frozen=True)
class AdiabaticProfile:
    """Piecewise raised-cosine control profile.

    ``u1_levels`` and ``u2_levels`` give the values at t1, t2, t3; both
    controls are zero at t0 and t4.  The defaults were tuned for
    V = 100 and T = t3 - t1 = 20.
    """

    T: float = 20.0
    fast: float = 0.5
    u1_levels: tuple[float, float, float] = (0.0, 0.9978, 0.0)
    u2_levels: tuple[float, float, float] = (0.3048, 0.1326, 0.0513)

    def __post_init__(self):
        if not self.T > 0 or not self.fast > 0:
            raise ValueError("durations must be positive")
        if any(not 0.0 <= u <= 1.0 for u in self.u1_levels):
            raise ValueError("u1 levels must lie in [0, 1]")
        if any(not -1.0 <= u <= 1.0 for u in self.u2_levels):
            raise ValueError("u2 levels must lie in [-1, 1]")

    @property
    def breakpoints(self) -> list[float]:
        f, T = self.fast, self.T
        return [0.0, f, f + T / 2, f + T, 2 * f + T]

    def compressed(self, T: float) -> "AdiabaticProfile":
        return AdiabaticProfile(T, self.fast, self.u1_levels, self.u2_levels)


@dataclass
class LevelScan:
    """Instantaneous k = 0 levels of the 2 pi cell along a schedule window."""

    times: np.ndarray
    energies: np.ndarray
    tracked: np.ndarray

    @property
    def gaps(self) -> np.ndarray:
        idx = np.arange(len(self.times))
        E = self.energies
        j = self.tracked
        below = np.where(j > 0, E[idx, j] - E[idx, np.maximum(j - 1, 0)], np.inf)
        above = np.where(j < E.shape[1] - 1, E[idx, np.minimum(j + 1, E.shape[1] - 1)] - E[idx, j], np.inf)
        return np.minimum(below, above)

    @property
    def min_gap(self) -> float:
        return float(self.gaps.min())

    @property
    def min_gap_time(self) -> float:
        return float(self.times[int(np.argmin(self.gaps))])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "level", "energy"])
            for t, row in zip(self.times, self.energies):
                for n, e in enumerate(row):
                    w.writerow([repr(float(t)), n, repr(float(e))])
        return path


def _marker_weight(vec: np.ndarray, c: LatticeControls, site: float) -> float:
    """Probability of a k = 0 cell eigenvector in the well around ``site``."""
    G = np.arange(-(len(vec) // 2), len(vec) // 2 + 1)
    x = np.linspace(site - math.pi / 2, site + math.pi / 2, 257)
    psi = np.exp(-1j * np.outer(x, G)) @ vec
    return float(np.trapezoid(np.abs(psi) ** 2, x) / (2 * math.pi))


def scan_levels(schedule: PulseSchedule, t_from: float, t_to: float, tracked: int,
                n: int = 401, n_levels: int = 6) -> LevelScan:
    """Follow level ``tracked`` from ``t_from`` to ``t_to`` by maximal overlap.

    Raises:
        LevelCrossingError: if the followed state changes its position in
            the ordered spectrum, which happens only at a crossing.
    """
    times = np.linspace(t_from, t_to, n)
    energies = np.empty((n, n_levels))
    idx = np.empty(n, dtype=int)
    prev = None
    j = tracked
    for i, t in enumerate(times):
        E, vecs = instantaneous_levels(schedule.controls_at(float(t)), n_levels)
        if prev is not None:
            ov = np.abs(prev.conj() @ vecs)
            jn = int(np.argmax(ov))
            if jn != j:
                raise LevelCrossingError(
                    f"tracked level {j} crosses level {jn} near t = {t:.4g}", float(t))
        energies[i] = E
        idx[i] = j
        prev = vecs[:, j]
    return LevelScan(times, energies, idx)


def build_adiabatic_schedule(profile: AdiabaticProfile | None = None, V: float = 100.0,
                             sigma: int = 1, l: int = 0, samples_per_unit: int = 400,
                             check_levels: bool = True) -> PulseSchedule:
    """Sampled schedule for one transport step.

    With ``check_levels`` the instantaneous spectrum is followed over
    stages (ii)-(iii); the raised marker level must sit above the
    neighbour's first excited level at t1 and must not cross another
    level afterwards.

    Raises:
        ValueError: for V below the tight-binding regime.
        LevelCrossingError: if the profile fails the level checks.
    """
    profile = profile or AdiabaticProfile()
    if V < 50.0:
        raise ValueError(f"transport needs a deep lattice (V >= 50), got V = {V}")
    knots = profile.breakpoints
    n = max(int(knots[-1] * samples_per_unit), 2 * len(knots)) + 1
    t = np.union1d(np.linspace(0.0, knots[-1], n), knots)
    u1 = _raised_cosine(t, knots, (0.0, *profile.u1_levels, 0.0))
    u2 = _raised_cosine(t, knots, (0.0, *profile.u2_levels, 0.0))
    sched = PulseSchedule(t, u1, u2, sigma=sigma, l=l, V=V, kappa=1.0, breakpoints=tuple(knots))
    if check_levels:
        level_scan(sched)
    return sched


def level_scan(schedule: PulseSchedule, n: int = 401) -> LevelScan:
    """Check the marker level over stages (ii)-(iii) and return the scan.

    The tracked level is the ground level of the raised marker well at
    x = pi/2 at t1, which must lie above both the neighbour's ground and
    first excited levels.
    """
    t1, t3 = schedule.breakpoints[1], schedule.breakpoints[3]
    c1 = schedule.controls_at(t1)
    E, vecs = instantaneous_levels(c1, 6)
    # in the 2 pi cell, lowest marker-localized state is the raised ground
    weights = [_marker_weight(vecs[:, j], c1, MARKER_SITE) for j in range(vecs.shape[1])]
    marker = [j for j, w in enumerate(weights) if w > 0.5]
    if not marker:
        raise LevelCrossingError("no marker-localized level at t1", t1)
    j = marker[0]
    if j < 2:
        raise LevelCrossingError(
            f"raised marker level is level {j} at t1; it must exceed the neighbour's first excited level", t1)
    return scan_levels(schedule, t1, t3, j, n=n)


@dataclass
class TransportStates:
    """Wannier functions used as initial states and targets."""

    grid: SpatialGrid
    marker: np.ndarray
    register: np.ndarray
    marker_target: np.ndarray

    def stacked_initial(self) -> np.ndarray:
        return np.stack([self.marker, self.register], axis=1)

    def stacked_targets(self) -> np.ndarray:
        return np.stack([self.marker_target, self.register], axis=1)


def transport_states(V: float = 100.0, grid: SpatialGrid | None = None, direction: str = "right",
                     M: int = 32) -> TransportStates:
    """Marker ground Wannier at pi/2, register ground and marker target in the neighbour."""
    grid = grid or SpatialGrid.lattice()
    bs = band_structure(LatticeControls(V=V), M=M, n_bands=2)
    neighbour = MARKER_SITE + (math.pi if direction == "right" else -math.pi)
    return TransportStates(
        grid,
        wannier(bs, 0, MARKER_SITE, grid).psi,
        wannier(bs, 0, neighbour, grid).psi,
        wannier(bs, 1, neighbour, grid).psi,
    )


@dataclass
class TransportFidelity:
    F_M: float
    F_R: float
    T: float
    dt: float
    N: int
    final: np.ndarray = field(repr=False)
    min_gap: float | None = None

    def summary(self, breakpoints=None) -> dict:
        out = {"F_M": self.F_M, "F_R": self.F_R, "T": self.T, "dt": self.dt, "N": self.N}
        if breakpoints is not None:
            out["breakpoints"] = [float(b) for b in breakpoints]
        if self.min_gap is not None:
            out["min_gap"] = self.min_gap
        return out

    def to_json(self, path, breakpoints=None) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.summary(breakpoints), indent=2) + "\n")
        return path


def simulate_transport(schedule: PulseSchedule, states: TransportStates | None = None,
                       dt: float = 1e-3, direction: str = "right") -> TransportFidelity:
    """Propagate marker and register through the whole schedule and score them.

    Args:
        schedule: full t0..t4 schedule.
        states: initial/target Wannier functions; built for the schedule's
            V on the default grid when omitted.
        dt: maximal time step.
        direction: used only when ``states`` is built here.

    Returns:
        Marker fidelity against the neighbour's first excited Wannier
        function and register fidelity against its own initial state.
    """
    states = states or transport_states(schedule.V, direction=direction)
    out = propagate(states.stacked_initial(), schedule, states.grid, dt)
    dx = states.grid.dx
    F_M = abs(np.vdot(states.marker_target, out[:, 0]) * dx) ** 2
    F_R = abs(np.vdot(states.register, out[:, 1]) * dx) ** 2
    T = schedule.breakpoints[3] - schedule.breakpoints[1] if schedule.breakpoints else schedule.duration
    return TransportFidelity(float(F_M), float(F_R), float(T), dt, states.grid.n, out)


def transport_duration_seconds(T: float, species: str) -> float:
    return lattice_time_to_seconds(T, species)
