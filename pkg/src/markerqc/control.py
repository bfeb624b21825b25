"""Immediate-feedback (Krotov-type) optimal control.

A problem propagates a set of states ``psi_A`` under controls u_j(t)
that enter the Hamiltonian linearly or at least smoothly.  Each
iteration

1. takes the terminal costates chi_A(T) from the current final states,
2. propagates them backwards with the current controls u^(n),
3. sweeps forward again: chi_A with u^(n), psi_A with controls that are
   updated at every step,

       u_j^(n+1)(t) = u_j^(n)(t) + (2 / lambda(t)) Im sum_A <chi_A|dH/du_j|psi_A>.

Two objectives are supported.  ``"modulus"`` is sum_A 1 - |<f_A|psi_A(T)>|^2
(phase-insensitive, used for transport), ``"real"`` is
sum_A 1 - Re <f_A|psi_A(T)> (phase-sensitive, used for gate ramps).

Units follow the propagators: hbar = 1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .lattice import potential_basis
from .tdse import CrankNicolson, SpatialGrid, _cn_step, propagate_controls

log = logging.getLogger(__name__)

OBJECTIVES = ("modulus", "real")


def overlaps(targets: np.ndarray, states: np.ndarray, weight: float = 1.0) -> np.ndarray:
    """Per-column <f_A|psi_A>."""
    return weight * np.einsum("ia,ia->a", targets.conj(), states)


def objective_value(tau: np.ndarray, kind: str = "modulus") -> float:
    """Summed infidelity for target overlaps ``tau``."""
    if kind == "modulus":
        return float(np.sum(1.0 - np.abs(tau) ** 2))
    if kind == "real":
        return float(np.sum(1.0 - tau.real))
    raise ValueError(f"unknown objective {kind!r}")


def costate_terminal(final: np.ndarray, targets: np.ndarray, kind: str = "modulus",
                     weight: float = 1.0) -> np.ndarray:
    """chi_A(T): the part of psi_A(T) that has reached its target.

    For the modulus objective chi = f <f|psi(T)>; for the real-part
    objective chi = f / 2.
    """
    if kind == "modulus":
        return targets * overlaps(targets, final, weight)[None, :]
    if kind == "real":
        return 0.5 * targets.astype(complex)
    raise ValueError(f"unknown objective {kind!r}")


def endpoint_weight(n_steps: int, edge: float = 0.02, factor: float = 1e6) -> np.ndarray:
    """Multiplier for lambda(t) on step midpoints.

    Equal to 1 in the interior and rising exponentially to ``factor``
    within the fraction ``edge`` of the window next to either endpoint.
    """
    mids = (np.arange(n_steps) + 0.5) / n_steps
    d = np.minimum(mids, 1.0 - mids)
    s = np.clip(d / edge, 0.0, 1.0)
    return factor ** (1.0 - s)


@dataclass
class OptimizerConfig:
    """Settings of the feedback loop.

    ``lam`` is the interior weight lambda_0; ``None`` picks it by a
    three-point bracket on the first iteration.
    """

    max_iter: int = 500
    threshold: float = 1e-4
    lam: float | None = None
    lam_bracket: tuple[float, float, float] = (10.0, 30.0, 100.0)
    edge: float = 0.02
    edge_factor: float = 1e6
    monotone_tol: float = 1e-10
    max_rejections: int = 30

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if any(not b > 0 for b in self.lam_bracket):
            raise ValueError("lambda bracket must be positive")


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    fidelities: tuple[float, ...]
    lam: float


@dataclass
class OptimizationResult:
    controls: np.ndarray
    objective: float
    fidelities: tuple[float, ...]
    history: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    lam: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


class ControlProblem:
    """Base class; subclasses provide propagation and dH/du.

    Attributes expected on subclasses: ``dt``, ``n_steps``, ``n_controls``,
    ``initial`` and ``targets`` (one state per column), ``kind``.
    ``weight`` multiplies inner products (grid spacing for wavefunctions).
    """

    weight = 1.0
    kind = "modulus"
    bounds: tuple[tuple[float, float], ...] | None = None

    def step(self, states: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        raise NotImplementedError

    def derivative_overlaps(self, chi: np.ndarray, psi: np.ndarray, u: np.ndarray) -> np.ndarray:
        """sum_A <chi_A| dH/du_j |psi_A> for each control j."""
        raise NotImplementedError

    def sweep(self, states: np.ndarray, controls: np.ndarray, backward: bool = False) -> np.ndarray:
        out = np.array(states, dtype=complex, copy=True)
        order = range(self.n_steps - 1, -1, -1) if backward else range(self.n_steps)
        h = -self.dt if backward else self.dt
        for k in order:
            out = self.step(out, controls[k], h)
        return out

    def co_sweep(self, psi0: np.ndarray, chi0: np.ndarray, controls: np.ndarray,
                 scale: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Forward pass with per-step feedback; returns (new controls, psi(T))."""
        psi = np.array(psi0, dtype=complex, copy=True)
        chi = np.array(chi0, dtype=complex, copy=True)
        new = np.array(controls, dtype=float, copy=True)
        for k in range(self.n_steps):
            K = self.derivative_overlaps(chi, psi, controls[k])
            new[k] = self.clip(controls[k] + scale[k] * K.imag)
            psi = self.step(psi, new[k], self.dt)
            chi = self.step(chi, controls[k], self.dt)
        return new, psi

    def clip(self, u: np.ndarray) -> np.ndarray:
        if self.bounds is None:
            return u
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return np.clip(u, lo, hi)

    # -- scoring ------------------------------------------------------------

    def final_states(self, controls: np.ndarray) -> np.ndarray:
        return self.sweep(self.initial, controls)

    def target_overlaps(self, final: np.ndarray) -> np.ndarray:
        return overlaps(self.targets, final, self.weight)

    def objective(self, controls: np.ndarray) -> float:
        return objective_value(self.target_overlaps(self.final_states(controls)), self.kind)

    def fidelities(self, final: np.ndarray) -> tuple[float, ...]:
        return tuple(float(abs(t) ** 2) for t in self.target_overlaps(final))


def iterate(problem: ControlProblem, controls: np.ndarray, final: np.ndarray,
            lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """One feedback iteration from ``controls`` whose final states are ``final``.

    ``lam`` holds lambda on the step midpoints.  Returns the new controls,
    their final states and their objective value.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("lambda(t) must be finite and positive")
    chi_T = costate_terminal(final, problem.targets, problem.kind, problem.weight)
    chi_0 = problem.sweep(chi_T, controls, backward=True)
    new, psi_T = problem.co_sweep(problem.initial, chi_0, controls, 2.0 / lam)
    J = objective_value(problem.target_overlaps(psi_T), problem.kind)
    return new, psi_T, J


def optimize(problem: ControlProblem, initial_controls: np.ndarray,
             config: OptimizerConfig | None = None, callback=None) -> OptimizationResult:
    """Run the feedback loop until the objective drops below the threshold.

    Iterations that would raise the objective are rejected and retried
    with doubled lambda, so the recorded objective is non-increasing.
    """
    config = config or OptimizerConfig()
    controls = np.array(initial_controls, dtype=float, copy=True)
    shape = endpoint_weight(problem.n_steps, config.edge, config.edge_factor)
    final = problem.final_states(controls)
    J = objective_value(problem.target_overlaps(final), problem.kind)
    history = [IterationRecord(0, J, problem.fidelities(final), float("nan"))]

    lam0 = config.lam
    if lam0 is None:
        trials = []
        for cand in config.lam_bracket:
            new, fin, Jn = iterate(problem, controls, final, cand * shape)
            trials.append((Jn, cand, new, fin))
        Jn, lam0, new, fin = min(trials, key=lambda r: r[0])
        log.info("lambda bracket %s -> %g", config.lam_bracket, lam0)
        pending = (new, fin, Jn) if Jn <= J + config.monotone_tol else None
    else:
        pending = None

    converged = J < config.threshold
    it = 0
    while not converged and it < config.max_iter:
        rejections = 0
        while True:
            if pending is None:
                pending = iterate(problem, controls, final, lam0 * shape)
            new, fin, Jn = pending
            pending = None
            if Jn <= J + config.monotone_tol:
                break
            rejections += 1
            if rejections > config.max_rejections:
                log.warning("no improving step found; stopping at iteration %d", it)
                return OptimizationResult(controls, J, problem.fidelities(final), history, False, lam0)
            lam0 *= 2.0
        it += 1
        controls, final, J = new, fin, Jn
        history.append(IterationRecord(it, J, problem.fidelities(final), lam0))
        if callback is not None:
            callback(history[-1])
        converged = J < config.threshold
    return OptimizationResult(controls, J, problem.fidelities(final), history, converged, lam0)


# -- lattice transport problem ---------------------------------------------

@numba.njit(cache=True)
def _lattice_co_sweep(psi, chi, base, d1, d2, u_old, scale, lo, hi, dx, dt):
    n, m = psi.shape
    n_steps = u_old.shape[0]
    u_new = u_old.copy()
    rhs = np.empty((n, m), dtype=np.complex128)
    out = np.empty((n, m), dtype=np.complex128)
    cp = np.empty(n, dtype=np.complex128)
    diag = np.empty(n, dtype=np.complex128)
    wu = np.empty((n, 1), dtype=np.complex128)
    pot = np.empty(n)
    for k in range(n_steps):
        k1 = 0.0j
        k2 = 0.0j
        for i in range(n):
            for a in range(m):
                z = chi[i, a].conjugate() * psi[i, a]
                k1 += z * d1[i]
                k2 += z * d2[i]
        a1 = u_old[k, 0] + scale[k] * k1.imag * dx
        a2 = u_old[k, 1] + scale[k] * k2.imag * dx
        u_new[k, 0] = min(max(a1, lo[0]), hi[0])
        u_new[k, 1] = min(max(a2, lo[1]), hi[1])
        for i in range(n):
            pot[i] = base[i] + u_new[k, 0] * d1[i] + u_new[k, 1] * d2[i]
        _cn_step(psi, pot, dx, dt, False, rhs, out, cp, diag, wu)
        for i in range(n):
            pot[i] = base[i] + u_old[k, 0] * d1[i] + u_old[k, 1] * d2[i]
        _cn_step(chi, pot, dx, dt, False, rhs, out, cp, diag, wu)
    return u_new


class LatticeTransportProblem(ControlProblem):
    """Marker and register wavefunctions driven by (u1, u2) on a hard-wall grid.

    ``controls[k] = (u1, u2)`` at the midpoint of step k.
    """

    n_controls = 2

    def __init__(self, grid: SpatialGrid, V: float, sigma: int, l: int,
                 initial: np.ndarray, targets: np.ndarray, duration: float, n_steps: int,
                 bounds=((0.0, 1.0), (-1.0, 1.0))):
        if grid.periodic:
            raise ValueError("transport problems use hard-wall grids")
        self.grid = grid
        self.V, self.sigma, self.l = V, sigma, l
        self.initial = np.ascontiguousarray(initial, dtype=complex)
        self.targets = np.ascontiguousarray(targets, dtype=complex)
        self.n_steps = int(n_steps)
        self.duration = float(duration)
        self.dt = self.duration / self.n_steps
        self.weight = grid.dx
        self.bounds = bounds
        self.basis = potential_basis(grid.x, V, sigma, l)
        self._cn = CrankNicolson(grid)

    def potential(self, u) -> np.ndarray:
        base, d1, d2 = self.basis
        return base + u[0] * d1 + u[1] * d2

    def step(self, states, u, dt):
        return self._cn.step(states, self.potential(u), dt)

    def derivative_overlaps(self, chi, psi, u):
        _, d1, d2 = self.basis
        z = np.sum(chi.conj() * psi, axis=1)
        return self.grid.dx * np.array([np.dot(d1, z), np.dot(d2, z)])

    def sweep(self, states, controls, backward=False):
        controls = np.asarray(controls, dtype=float)
        if backward:
            return propagate_controls(states, self.grid, self.V, self.sigma, self.l,
                                      controls[::-1, 0], controls[::-1, 1], -self.dt)
        return propagate_controls(states, self.grid, self.V, self.sigma, self.l,
                                  controls[:, 0], controls[:, 1], self.dt)

    def co_sweep(self, psi0, chi0, controls, scale):
        psi = np.array(psi0, dtype=complex, copy=True)
        chi = np.array(chi0, dtype=complex, copy=True)
        base, d1, d2 = self.basis
        lo = np.array([b[0] for b in self.bounds], dtype=float)
        hi = np.array([b[1] for b in self.bounds], dtype=float)
        new = _lattice_co_sweep(psi, chi, base, d1, d2, np.ascontiguousarray(controls, dtype=float),
                                np.ascontiguousarray(scale, dtype=float), lo, hi, self.grid.dx, self.dt)
        return new, psi

    def gradient(self, controls: np.ndarray) -> np.ndarray:
        """Exact gradient dJ/du[k, j] of the discretized objective.

        For a CN step the derivative reduces to -2 dt Im <chi_bar|dU/du_j|psi_bar>
        with step-averaged states; both are recovered in one backward pass
        (CN is exactly invertible).
        """
        controls = np.asarray(controls, dtype=float)
        psi = self.final_states(controls)
        chi = costate_terminal(psi, self.targets, self.kind, self.weight)
        _, d1, d2 = self.basis
        grad = np.empty_like(controls)
        for k in range(self.n_steps - 1, -1, -1):
            pot = self.potential(controls[k])
            psi_prev = self._cn.step(psi, pot, -self.dt)
            chi_prev = self._cn.step(chi, pot, -self.dt)
            z = np.sum((0.5 * (chi + chi_prev)).conj() * (0.5 * (psi + psi_prev)), axis=1)
            grad[k, 0] = -2.0 * self.dt * self.grid.dx * np.dot(d1, z).imag
            grad[k, 1] = -2.0 * self.dt * self.grid.dx * np.dot(d2, z).imag
            psi, chi = psi_prev, chi_prev
        return grad


def gradient_kernel(psi: np.ndarray, chi: np.ndarray, dU: np.ndarray, dx: float) -> complex:
    """K = int psi(x) dU/du(x) chi*(x) dx for one state pair (hbar = 1)."""
    return complex(np.sum(psi * dU * np.conj(chi)) * dx)


def write_history_csv(path, result: OptimizationResult, labels=("F_M", "F_R")) -> Path:
    """Convergence history as ``iter,<labels>,objective``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", *labels, "objective"])
        for rec in result.history:
            w.writerow([rec.iteration, *(repr(f) for f in rec.fidelities), repr(rec.objective)])
    return path


# -- transport set-up -------------------------------------------------------

@dataclass
class TransportControlSetup:
    """Optimization window [t1, t3] of a transport schedule.

    The fixed stages (i) and (iv) are folded into the boundary states:
    the initial states are the Wannier functions propagated through (i),
    the targets are the target Wannier functions propagated backwards
    through (iv).  Overlaps at t3 therefore equal the full t0..t4
    fidelities.
    """

    problem: LatticeTransportProblem
    schedule: object
    initial_controls: np.ndarray

    @property
    def midpoints(self) -> np.ndarray:
        p = self.problem
        t1 = self.schedule.breakpoints[1]
        return t1 + p.dt * (np.arange(p.n_steps) + 0.5)

    def to_schedule(self, controls: np.ndarray):
        """Full t0..t4 schedule with the optimized window spliced in."""
        from .lattice import PulseSchedule

        s = self.schedule
        t1, t3 = s.breakpoints[1], s.breakpoints[3]
        keep_lo = s.t < t1
        keep_hi = s.t > t3
        t = np.concatenate([s.t[keep_lo], [t1], self.midpoints, [t3], s.t[keep_hi]])
        u1a, u2a = s.sample([t1, t3])
        u1 = np.concatenate([s.u1[keep_lo], [u1a[0]], controls[:, 0], [u1a[1]], s.u1[keep_hi]])
        u2 = np.concatenate([s.u2[keep_lo], [u2a[0]], controls[:, 1], [u2a[1]], s.u2[keep_hi]])
        return PulseSchedule(t, u1, u2, s.sigma, s.l, s.V, s.kappa, s.breakpoints)


def transport_setup(schedule, states, dt: float = 1e-3) -> TransportControlSetup:
    """Build the control problem for the [t1, t3] window of ``schedule``.

    Args:
        schedule: full transport schedule with five breakpoints.
        states: TransportStates with the Wannier functions on a grid.
        dt: maximal step; the window is split into equal steps.
    """
    from .tdse import midpoint_controls, propagate

    if len(schedule.breakpoints) != 5:
        raise ValueError("transport schedules need five breakpoints t0..t4")
    t0, t1, _, t3, t4 = schedule.breakpoints
    grid = states.grid
    psi1 = propagate(states.stacked_initial(), schedule, grid, dt, t0, t1)
    back = schedule.reversed()
    # reversed schedule runs t4 -> t3 over [0, t4 - t3]
    h, u1, u2 = midpoint_controls(back, 0.0, t4 - t3, dt)
    targets = propagate_controls(states.stacked_targets(), grid, schedule.V, schedule.sigma,
                                 schedule.l, u1, u2, -h)
    h, u1, u2 = midpoint_controls(schedule, t1, t3, dt)
    problem = LatticeTransportProblem(grid, schedule.V, schedule.sigma, schedule.l, psi1,
                                      targets, t3 - t1, len(u1))
    return TransportControlSetup(problem, schedule, np.stack([u1, u2], axis=1))
