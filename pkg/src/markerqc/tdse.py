"""Crank-Nicolson propagation of the 1D Schroedinger equation.

Units: hbar = 1, energies in E_r, lengths in 1/kappa, so the kinetic
operator is -d^2/dx^2 (2m = 1).  The Laplacian is the second-order
central difference; each step solves one complex tridiagonal system
(cyclic for periodic grids).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .lattice import PulseSchedule, potential_basis

BOUNDARIES = ("hardwall", "periodic")


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid x_i = lo + i*dx, i = 0..N-1, dx = L/N.

    For ``hardwall`` the wavefunction vanishes at lo - dx and lo + L;
    for ``periodic`` the point lo + L is identified with lo.
    """

    lo: float
    length: float
    n: int
    boundary: str = "hardwall"

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")
        if self.n < 3 or self.length <= 0:
            raise ValueError("grid needs n >= 3 points and positive length")

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return self.lo + self.dx * np.arange(self.n)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @classmethod
    def lattice(cls, center: float = math.pi, periods: int = 8, points_per_period: int = 256) -> "SpatialGrid":
        """Hard-wall grid of ``periods`` superlattice periods (2pi each) centred on ``center``."""
        if points_per_period < 32:
            raise ValueError("need at least 32 points per lattice period")
        length = 2.0 * math.pi * periods
        return cls(lo=center - length / 2, length=length, n=periods * points_per_period)

    def compatible(self, other: "SpatialGrid") -> bool:
        return (self.n == other.n and self.boundary == other.boundary
                and math.isclose(self.lo, other.lo, abs_tol=1e-12)
                and math.isclose(self.length, other.length, rel_tol=1e-12))


@dataclass
class GridWavefunction:
    psi: np.ndarray
    grid: SpatialGrid
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.n,):
            raise ValueError(f"wavefunction has shape {self.psi.shape}, grid has {self.grid.n} points")

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.dx))

    def normalized(self) -> "GridWavefunction":
        return GridWavefunction(self.psi / self.norm, self.grid, self.t)

    def inner(self, other: "GridWavefunction") -> complex:
        """<self|other> = sum conj(self) * other dx."""
        _check_grids(self.grid, other.grid)
        return complex(np.vdot(self.psi, other.psi) * self.grid.dx)


def _check_grids(a: SpatialGrid, b: SpatialGrid):
    if not a.compatible(b):
        raise ValueError("wavefunctions live on different grids")


def fidelity(psi: GridWavefunction, target: GridWavefunction) -> float:
    """|<psi|target>|^2 for unit-norm arguments."""
    return abs(psi.inner(target)) ** 2


# -- kernels ---------------------------------------------------------------

@numba.njit(cache=True)
def _thomas_const(diag, off, rhs, out, cp):
    """Solve a tridiagonal system with varying diagonal and constant off-diagonal.

    ``cp`` receives the reciprocal pivots; the factorization is shared by
    all right-hand sides (columns of ``rhs``).
    """
    n, m = rhs.shape
    inv = 1.0 / diag[0]
    cp[0] = inv
    for k in range(m):
        out[0, k] = rhs[0, k] * inv
    for i in range(1, n):
        inv = 1.0 / (diag[i] - off * off * inv)
        cp[i] = inv
        for k in range(m):
            out[i, k] = (rhs[i, k] - off * out[i - 1, k]) * inv
    for i in range(n - 2, -1, -1):
        f = off * cp[i]
        for k in range(m):
            out[i, k] -= f * out[i + 1, k]


@numba.njit(cache=True)
def _cn_step(psi, pot, dx, dt, periodic, work_rhs, work_out, work_cp, work_diag, work_u):
    """One CN step in place: (1 + i dt H/2) psi' = (1 - i dt H/2) psi."""
    n, m = psi.shape
    inv_dx2 = 1.0 / (dx * dx)
    half = 0.5j * dt
    off_h = -inv_dx2
    b = half * off_h
    for i in range(n):
        d = 2.0 * inv_dx2 + pot[i]
        work_diag[i] = 1.0 + half * d
        for k in range(m):
            left = psi[i - 1, k] if i > 0 else (psi[n - 1, k] if periodic else 0.0)
            right = psi[i + 1, k] if i < n - 1 else (psi[0, k] if periodic else 0.0)
            work_rhs[i, k] = (1.0 - half * d) * psi[i, k] - b * (left + right)
    if not periodic:
        _thomas_const(work_diag, b, work_rhs, work_out, work_cp)
        for i in range(n):
            for k in range(m):
                psi[i, k] = work_out[i, k]
        return
    # cyclic system via Sherman-Morrison: A = T + u v^T, u = (g, 0.., b), v = (1, 0.., b/g)
    g = -work_diag[0]
    d0 = work_diag[0]
    dn = work_diag[n - 1]
    work_diag[0] = d0 - g
    work_diag[n - 1] = dn - b * b / g
    _thomas_const(work_diag, b, work_rhs, work_out, work_cp)
    # z solves T z = u
    for i in range(n):
        work_u[i, 0] = 0.0
    work_u[0, 0] = g
    work_u[n - 1, 0] = b
    zbuf = np.empty((n, 1), dtype=np.complex128)
    _thomas_const(work_diag, b, work_u, zbuf, work_cp)
    denom = 1.0 + zbuf[0, 0] + b / g * zbuf[n - 1, 0]
    for k in range(m):
        fac = (work_out[0, k] + b / g * work_out[n - 1, k]) / denom
        for i in range(n):
            psi[i, k] = work_out[i, k] - fac * zbuf[i, 0]
    work_diag[0] = d0
    work_diag[n - 1] = dn


@numba.njit(cache=True)
def _propagate_affine(psi, base, d1, d2, u1s, u2s, dx, dt, periodic):
    n, m = psi.shape
    rhs = np.empty((n, m), dtype=np.complex128)
    out = np.empty((n, m), dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    diag = np.empty(n, dtype=np.complex128)
    wu = np.empty((n, 1), dtype=np.complex128)
    pot = np.empty(n)
    for s in range(u1s.shape[0]):
        a = u1s[s]
        c = u2s[s]
        for i in range(n):
            pot[i] = base[i] + a * d1[i] + c * d2[i]
        _cn_step(psi, pot, dx, dt, periodic, rhs, out, cp, diag, wu)


class CrankNicolson:
    """Reusable CN stepper on a fixed grid; works on (N,) or (N, m) arrays."""

    def __init__(self, grid: SpatialGrid):
        self.grid = grid
        n = grid.n
        self._rhs = np.empty((n, 1), dtype=complex)
        self._out = np.empty((n, 1), dtype=complex)
        self._cp = np.empty(n, dtype=complex)
        self._diag = np.empty(n, dtype=complex)
        self._wu = np.empty((n, 1), dtype=complex)

    def _buffers(self, m: int):
        if self._rhs.shape[1] != m:
            n = self.grid.n
            self._rhs = np.empty((n, m), dtype=complex)
            self._out = np.empty((n, m), dtype=complex)
        return self._rhs, self._out

    def step(self, psi: np.ndarray, potential: np.ndarray, dt: float) -> np.ndarray:
        """Advance ``psi`` by ``dt`` under the given potential samples; returns a new array."""
        arr = np.array(psi, dtype=complex, copy=True)
        flat = arr.ndim == 1
        work = arr.reshape(self.grid.n, -1)
        rhs, out = self._buffers(work.shape[1])
        _cn_step(work, np.ascontiguousarray(potential, dtype=float), self.grid.dx, float(dt),
                 self.grid.periodic, rhs, out, self._cp, self._diag, self._wu)
        if not np.all(np.isfinite(work)):
            raise FloatingPointError("tridiagonal solve broke down")
        return work.reshape(-1) if flat else work

    def step_inplace(self, work: np.ndarray, potential: np.ndarray, dt: float):
        rhs, out = self._buffers(work.shape[1])
        _cn_step(work, potential, self.grid.dx, float(dt), self.grid.periodic,
                 rhs, out, self._cp, self._diag, self._wu)


def apply_hamiltonian(psi: np.ndarray, potential: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """H psi with the same finite-difference Laplacian the propagator uses."""
    psi = np.asarray(psi, dtype=complex)
    lap = -2.0 * psi
    if grid.periodic:
        lap += np.roll(psi, 1) + np.roll(psi, -1)
    else:
        lap[1:] += psi[:-1]
        lap[:-1] += psi[1:]
    return -lap / grid.dx ** 2 + potential * psi


def cn_step(psi: GridWavefunction, potential: np.ndarray, dt: float) -> GridWavefunction:
    """One Crank-Nicolson step with the potential evaluated at t + dt/2."""
    out = CrankNicolson(psi.grid).step(psi.psi, potential, dt)
    return GridWavefunction(out, psi.grid, psi.t + dt)


def step_count(duration: float, dt: float) -> tuple[int, float]:
    """Number of steps covering ``duration`` with spacing at most ``dt``."""
    if duration < 0 or dt <= 0:
        raise ValueError("need duration >= 0 and dt > 0")
    n = max(1, int(math.ceil(duration / dt - 1e-9))) if duration > 0 else 0
    return n, (duration / n if n else 0.0)


def midpoint_controls(schedule: PulseSchedule, t_start: float, t_end: float, dt: float):
    """Step size and controls sampled at the step midpoints of [t_start, t_end]."""
    n, h = step_count(t_end - t_start, dt)
    mids = t_start + h * (np.arange(n) + 0.5)
    u1, u2 = schedule.sample(mids)
    return h, u1, u2


def propagate_controls(states: np.ndarray, grid: SpatialGrid, V: float, sigma: int, l: int,
                       u1: np.ndarray, u2: np.ndarray, dt: float) -> np.ndarray:
    """Propagate one or several wavefunctions (columns) through per-step controls.

    ``u1[k], u2[k]`` hold the controls at the midpoint of step k.  A
    negative ``dt`` runs the exact inverse sequence (the caller must then
    pass controls in reversed order).
    """
    arr = np.array(states, dtype=complex, copy=True)
    flat = arr.ndim == 1
    work = np.ascontiguousarray(arr.reshape(grid.n, -1))
    base, d1, d2 = potential_basis(grid.x, V, sigma, l)
    _propagate_affine(work, base, d1, d2, np.ascontiguousarray(u1, dtype=float),
                      np.ascontiguousarray(u2, dtype=float), grid.dx, float(dt), grid.periodic)
    if not np.all(np.isfinite(work)):
        raise FloatingPointError("tridiagonal solve broke down")
    return work.reshape(-1) if flat else work


def propagate(psi0, schedule: PulseSchedule, grid: SpatialGrid, dt: float = 1e-3,
              t_start: float | None = None, t_end: float | None = None,
              snapshots=()):
    """Propagate through ``schedule`` from ``t_start`` to ``t_end``.

    ``psi0`` may be a GridWavefunction or an array with one state per
    column.  Returns the final state(s); with ``snapshots`` also returns
    a dict {time: array} of the states at the requested times.
    """
    if isinstance(psi0, GridWavefunction):
        _check_grids(psi0.grid, grid)
        arr = psi0.psi
    else:
        arr = np.asarray(psi0, dtype=complex)
    if arr.shape[0] != grid.n:
        raise ValueError(f"state has {arr.shape[0]} points, grid has {grid.n}")
    t_start = schedule.t[0] if t_start is None else t_start
    t_end = schedule.t[-1] if t_end is None else t_end
    if t_start < schedule.t[0] - 1e-12 or t_end > schedule.t[-1] + 1e-12:
        raise ValueError("requested interval lies outside the schedule samples")
    marks = sorted(float(s) for s in snapshots if t_start <= s <= t_end)
    cuts = [t_start] + marks + [t_end]
    snaps = {}
    state = arr
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b > a:
            h, u1, u2 = midpoint_controls(schedule, a, b, dt)
            state = propagate_controls(state, grid, schedule.V, schedule.sigma, schedule.l, u1, u2, h)
        if b in marks:
            snaps[b] = state.copy()
    if isinstance(psi0, GridWavefunction):
        result = GridWavefunction(state, grid, t_end)
    else:
        result = state
    return (result, snaps) if snapshots else result


def write_snapshot_csv(path, psi: GridWavefunction):
    path = Path(path)
    with path.open("w") as fh:
        fh.write("x,re,im,|psi|^2\n")
        for x, v in zip(psi.grid.x, psi.psi):
            fh.write(f"{float(x)!r},{float(v.real)!r},{float(v.imag)!r},{float(abs(v) ** 2)!r}\n")
    return path


def write_fidelity_json(path, F_M: float, F_R: float, T: float, dt: float, N: int):
    path = Path(path)
    path.write_text(json.dumps({"F_M": F_M, "F_R": F_R, "T": T, "dt": dt, "N": N}, indent=2) + "\n")
    return path
