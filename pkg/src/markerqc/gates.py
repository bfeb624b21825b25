"""Marker-conditioned single- and two-qubit gates.

The gate models are written in a rotating frame with hbar = 1; energies,
detunings and Rabi frequencies share one (arbitrary) unit and times are
in its inverse.  The optimized Feshbach ramp works on the trap level
model of :mod:`markerqc.feshbach` instead (energies in h*nu, times in 1/nu).

Basis conventions:
    single-qubit full model: (|0x>, |1x>, |M>)
    two-qubit full model:    (|00>, |01>, |10>, |11>, |M>)
    effective three-level:   (|S->, |01>, |10>)
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import linalg

from .control import ControlProblem, OptimizationResult, OptimizerConfig, optimize
from .feshbach import (CoupledLevelModel, TrapSpec, build_level_model, coupling_cigar,
                       coupling_isotropic, preset, step_propagator)

LOGICAL_LABELS = ("00", "01", "10", "11")


# -- dressed states -----------------------------------------------------------

def dressed_states(V0: float, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray, tuple[float, float]]:
    """Eigenstates of the pair/molecule block [[0, V0], [V0, eps]].

    Returns:
        (S_plus, S_minus, (E_plus, E_minus)) with vectors in the basis
        (|pair>, |M>).  On resonance S_pm = (|pair> +- |M>)/sqrt(2) with
        energies +-V0; in general the splitting is sqrt(eps^2 + 4 V0^2).
    """
    E, vecs = linalg.eigh(np.array([[0.0, V0], [V0, eps]]))
    s_minus, s_plus = vecs[:, 0], vecs[:, 1]
    # sign convention: positive pair component
    s_minus = s_minus * np.sign(s_minus[0] or 1.0)
    s_plus = s_plus * np.sign(s_plus[0] or 1.0)
    return s_plus, s_minus, (float(E[1]), float(E[0]))


# -- result container ------------------------------------------------------

@dataclass
class GateResult:
    """Logical-subspace gate matrix with diagnostics.

    ``matrix[i, j]`` is the amplitude of logical output i for logical
    input j.  ``leakage`` is the average population that leaves the
    logical subspace, ``infidelity`` is 1 - |Tr(V^dag U)|^2 / d^2 against
    ``target`` V (global phase ignored).
    """

    matrix: np.ndarray
    leakage: float = 0.0
    infidelity: float | None = None
    phi: float | None = None
    target: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    effective_regime: bool = True

    def to_dict(self) -> dict:
        out = {
            "matrix_re": self.matrix.real.tolist(),
            "matrix_im": self.matrix.imag.tolist(),
            "leakage": self.leakage,
            "infidelity": self.infidelity,
            "phi": self.phi,
            "effective_regime": self.effective_regime,
            "params": self.params,
        }
        return out

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def process_infidelity(U: np.ndarray, V: np.ndarray) -> float:
    """1 - |Tr(V^dag U)|^2 / d^2."""
    d = V.shape[0]
    return float(1.0 - abs(np.trace(V.conj().T @ U)) ** 2 / d ** 2)


def _result(U: np.ndarray, target, **kw) -> GateResult:
    leak = float(1.0 - np.mean(np.sum(np.abs(U) ** 2, axis=0)))
    inf = process_infidelity(U, target) if target is not None else None
    return GateResult(U, max(leak, 0.0), inf, target=target, **kw)


# -- single-qubit gate ------------------------------------------------------

@dataclass(frozen=True)
class SingleQubitGateSpec:
    """Raman rotation of a register atom next to a marker in state x.

    Attributes:
        omega1: Raman Rabi frequency.
        V0: coupling of |0x> to the molecular level.
        delta: Raman detuning; defaults to -V0 (resonant with |S->).
        phi: phase picked up by |0x> during the field ramps.
        threshold: largest omega1 / V0 counted as the effective regime.
    """

    omega1: float
    V0: float
    delta: float | None = None
    phi: float = 0.0
    threshold: float = 0.1

    def __post_init__(self):
        if self.V0 <= 0:
            raise ValueError("V0 must be positive")

    @property
    def detuning(self) -> float:
        return -self.V0 if self.delta is None else self.delta

    @property
    def effective(self) -> bool:
        return abs(self.omega1) / self.V0 <= self.threshold


def reduced_single_qubit_hamiltonian(spec: SingleQubitGateSpec) -> np.ndarray:
    """Two-level Hamiltonian on (|S->, |1x>) after dropping |S+>."""
    g = spec.omega1 / (2.0 * math.sqrt(2.0))
    return np.array([[-spec.V0, g], [g, spec.detuning]])


def single_qubit_unitary(spec: SingleQubitGateSpec, t: float) -> GateResult:
    """Logical 2x2 gate on (|0x>, |1x>) for a pulse of duration ``t``.

    The reduced Hamiltonian is exponentiated exactly, the common phase
    exp(i V0 t) is removed and the ramp phase ``phi`` multiplies the
    |0x> output.  Outside the effective regime the leakage of the full
    three-level model is attached and the result flagged.
    """
    R = linalg.expm(-1j * reduced_single_qubit_hamiltonian(spec) * t) * np.exp(-1j * spec.V0 * t)
    U = np.diag([unit_phase(spec.phi), 1.0]) @ R
    res = GateResult(U, phi=spec.phi, params={"omega1": spec.omega1, "V0": spec.V0, "t": t},
                     effective_regime=spec.effective)
    if not spec.effective:
        res.leakage = full_single_qubit(spec, t).leakage
    return res


def full_single_qubit_hamiltonian(spec: SingleQubitGateSpec, eps: float = 0.0) -> np.ndarray:
    """(|0x>, |1x>, |M>) rotating-frame Hamiltonian."""
    H = np.zeros((3, 3))
    H[1, 1] = spec.detuning
    H[2, 2] = eps
    H[0, 2] = H[2, 0] = spec.V0
    H[0, 1] = H[1, 0] = spec.omega1 / 2.0
    return H


def full_single_qubit(spec: SingleQubitGateSpec, t: float) -> GateResult:
    """Pulse on resonance in the full model, read out in (|S->, |1x>).

    The column for logical |0x> starts in |S->, which is what an
    adiabatic ramp onto resonance prepares.
    """
    s_plus, s_minus, _ = dressed_states(spec.V0)
    basis = np.zeros((3, 2))
    basis[[0, 2], 0] = s_minus
    basis[1, 1] = 1.0
    W = linalg.expm(-1j * full_single_qubit_hamiltonian(spec) * t)
    U = basis.T @ W @ basis * np.exp(-1j * spec.V0 * t)
    U = np.diag([unit_phase(spec.phi), 1.0]) @ U
    return _result(U, None, phi=spec.phi, params={"omega1": spec.omega1, "V0": spec.V0, "t": t},
                   effective_regime=spec.effective)


# -- two-qubit gate --------------------------------------------------------

def effective_two_qubit_hamiltonian(omega2: float, V0: float) -> np.ndarray:
    """Three-level Hamiltonian on (|S->, |01>, |10>) for delta = -V0."""
    g = omega2 / (2.0 * math.sqrt(2.0))
    H = -V0 * np.eye(3)
    H[0, 1] = H[1, 0] = H[0, 2] = H[2, 0] = g
    return H


def two_qubit_evolution(omega2: float, t: float) -> np.ndarray:
    """Closed-form propagator on (|S->, |01>, |10>), common phase removed.

    The off-diagonal entries are -i sin(omega2 t / 2) / sqrt(2); |S->
    exchanges population with the bright state (|01> + |10>)/sqrt(2).
    """
    c = math.cos(omega2 * t / 2.0)
    s = math.sqrt(2.0) * math.sin(omega2 * t / 2.0)
    return 0.5 * np.array([
        [2 * c, -1j * s, -1j * s],
        [-1j * s, c + 1, c - 1],
        [-1j * s, c - 1, c + 1],
    ])


@dataclass(frozen=True)
class TwoQubitGateSpec:
    """Parameters of the marker-register gate.

    Attributes:
        omega2: Raman Rabi frequency (0 for the C-phase gate).
        V0: coupling of |00> to the molecular level.
        phi: phase acquired by |00> during the field ramps.
        tau: Raman pulse duration; derived from the swap condition when None.
    """

    omega2: float = 0.0
    V0: float = 1.0
    phi: float = math.pi
    tau: float | None = None

    def __post_init__(self):
        if self.V0 <= 0:
            raise ValueError("V0 must be positive")
        if self.omega2 < 0:
            raise ValueError("omega2 must be non-negative")


class CommensurabilityError(ValueError):
    def __init__(self, message: str, nearest: tuple[int, int]):
        super().__init__(message)
        self.nearest = nearest


def nearest_swap_integers(ratio: float, max_index: int = 200) -> tuple[int, int, float]:
    """(n, m) minimizing |ratio - 2(2n+1)/(2m+1)| and the residual."""
    best = (0, 0, math.inf)
    for m in range(max_index + 1):
        # for fixed m the best n is the closest to (ratio (2m+1)/2 - 1)/2
        n0 = (ratio * (2 * m + 1) / 2.0 - 1.0) / 2.0
        for n in {max(0, math.floor(n0)), max(0, math.ceil(n0))}:
            r = abs(ratio - 2 * (2 * n + 1) / (2 * m + 1))
            if r < best[2] - 1e-15:
                best = (n, m, r)
    return best


def swap_settings(spec: TwoQubitGateSpec, rtol: float = 1e-9) -> tuple[int, int, float]:
    """Integers (n, m) and pulse duration tau satisfying the swap conditions.

    Raises:
        CommensurabilityError: if omega2/V0 is not 2(2n+1)/(2m+1) or the
            given tau does not match; the message names the nearest pair.
    """
    if spec.omega2 <= 0:
        raise CommensurabilityError("swap needs omega2 > 0", (0, 0))
    ratio = spec.omega2 / spec.V0
    n, m, res = nearest_swap_integers(ratio)
    if res > rtol * ratio:
        # suggest the closest low-order pair rather than a long pulse
        n, m, _ = nearest_swap_integers(ratio, max_index=10)
        frac = Fraction(2 * (2 * n + 1), 2 * m + 1)
        raise CommensurabilityError(
            f"omega2/V0 = {ratio:.6g} violates the swap condition omega2/V0 = 2(2n+1)/(2m+1); "
            f"nearest low-order choice is n={n}, m={m} (omega2 = {float(frac) * spec.V0:.6g})", (n, m))
    tau = 2 * (2 * n + 1) * math.pi / spec.omega2
    if spec.tau is not None and not math.isclose(spec.tau, tau, rel_tol=rtol):
        k = max(0, round((spec.tau * spec.omega2 / (2 * math.pi) - 1) / 2))
        raise CommensurabilityError(
            f"tau = {spec.tau:.6g} does not satisfy tau = 2(2n+1)pi/omega2; nearest n={k}", (k, m))
    return n, m, tau


def unit_phase(phi: float) -> complex:
    """exp(i phi), exact at multiples of pi/2 where cos/sin leave 1e-16 residues."""
    k = phi / (0.5 * math.pi)
    if abs(k - round(k)) < 1e-12:
        return (1.0 + 0j, 1j, -1.0 + 0j, -1j)[round(k) % 4]
    return complex(np.exp(1j * phi))


def ideal_cphase(phi: float = math.pi) -> np.ndarray:
    return np.diag([unit_phase(phi), 1.0, 1.0, 1.0])


def ideal_swap() -> np.ndarray:
    """-SWAP: the phase pattern produced at the swap settings with phi = 2 pi."""
    S = np.zeros((4, 4), dtype=complex)
    S[0, 0] = S[3, 3] = -1.0
    S[1, 2] = S[2, 1] = -1.0
    return S


def effective_gate_matrix(spec: TwoQubitGateSpec, tau: float) -> np.ndarray:
    """4x4 logical matrix of the effective model (common phase exp(i V0 tau) removed)."""
    U3 = two_qubit_evolution(spec.omega2, tau)
    U = np.zeros((4, 4), dtype=complex)
    U[:3, :3] = U3
    U[0, :3] *= unit_phase(spec.phi)
    # |11> sits at 2 delta = -2 V0, one V0 below the others
    U[3, 3] = np.exp(1j * spec.V0 * tau)
    return U


def gate_truth_table(spec: TwoQubitGateSpec, mode: str = "cphase") -> GateResult:
    """Logical truth table of the effective model.

    Args:
        spec: gate parameters.
        mode: "cphase" (requires omega2 = 0) or "swap" (requires the
            commensurability conditions).

    Raises:
        ValueError: for an unknown mode or omega2 != 0 in cphase mode.
        CommensurabilityError: for swap settings off the allowed ratios.
    """
    if mode == "cphase":
        if spec.omega2 != 0:
            raise ValueError("cphase mode needs omega2 = 0")
        U = ideal_cphase(spec.phi)
        return GateResult(U, 0.0, 0.0, spec.phi, ideal_cphase(spec.phi),
                          {"mode": mode, "V0": spec.V0, "phi": spec.phi})
    if mode == "swap":
        n, m, tau = swap_settings(spec)
        U = effective_gate_matrix(spec, tau)
        return GateResult(U, 0.0, process_infidelity(U, ideal_swap()), spec.phi, ideal_swap(),
                          {"mode": mode, "V0": spec.V0, "omega2": spec.omega2, "tau": tau,
                           "n": n, "m": m, "phi": spec.phi})
    raise ValueError(f"unknown gate mode {mode!r}")


def full_two_qubit_hamiltonian(V0: float, delta: float, eps: float, omega2: float) -> np.ndarray:
    """(|00>, |01>, |10>, |11>, |M>) rotating-frame Hamiltonian."""
    H = np.zeros((5, 5))
    H[1, 1] = H[2, 2] = delta
    H[3, 3] = 2 * delta
    H[4, 4] = eps
    H[0, 4] = H[4, 0] = V0
    g = omega2 / 2.0
    for a, b in ((0, 1), (0, 2), (3, 1), (3, 2)):
        H[a, b] = H[b, a] = g
    return H


def simulate_full_gate(V0: float, duration: float, omega2=0.0, eps=0.0, delta: float | None = None,
                       n_steps: int = 2000, dressed: bool = True, phi: float = 0.0,
                       target: np.ndarray | None = None, norm_tol: float = 1e-8) -> GateResult:
    """Integrate the five-level model and read out the logical 4x4 block.

    Args:
        V0: molecular coupling.
        duration: evolution time.
        omega2: Rabi frequency, constant or callable of time.
        eps: resonance energy, constant or callable of time.
        delta: Raman detuning, -V0 by default when omega2 is nonzero.
        n_steps: exact-exponential steps (controls sampled at midpoints).
        dressed: read |00> as the lower dressed state |S-> (pulse held
            on resonance) instead of the bare pair state (ramps included).
        phi: ramp phase applied to the logical |00> output.
        target: ideal logical matrix for the infidelity.

    Raises:
        FloatingPointError: if the propagator drifts from unitarity by
            more than ``norm_tol``.
    """
    om = omega2 if callable(omega2) else (lambda t, v=float(omega2): v)
    ep = eps if callable(eps) else (lambda t, v=float(eps): v)
    if delta is None:
        delta = -V0 if (callable(omega2) or omega2 != 0) else 0.0
    dt = duration / n_steps
    W = np.eye(5, dtype=complex)
    for k in range(n_steps):
        t = (k + 0.5) * dt
        W = linalg.expm(-1j * full_two_qubit_hamiltonian(V0, delta, ep(t), om(t)) * dt) @ W
    drift = float(np.max(np.abs(W.conj().T @ W - np.eye(5))))
    if drift > norm_tol:
        raise FloatingPointError(f"unitarity drift {drift:.3g}")
    basis = np.zeros((5, 4))
    if dressed:
        _, s_minus, _ = dressed_states(V0)
        basis[[0, 4], 0] = s_minus
    else:
        basis[0, 0] = 1.0
    basis[1, 1] = basis[2, 2] = basis[3, 3] = 1.0
    U = basis.T @ W @ basis
    if dressed:
        U = U * np.exp(-1j * V0 * duration)
    U[0, :] *= unit_phase(phi)
    res = _result(U, target, phi=phi, params={"V0": V0, "duration": duration, "delta": delta})
    if not dressed:
        res.phi = float(np.angle(U[0, 0]) - np.angle(U[1, 1]))
    return res


# -- optimized Feshbach ramp ----------------------------------------------

def dressed_ground(model: CoupledLevelModel, eps: float) -> np.ndarray:
    """Ground state of the level model at resonance energy ``eps``.

    For eps far above the trap levels this is the trapped pair ground
    state with a small molecular admixture; the sign makes its trap
    ground component positive.
    """
    _, vecs = linalg.eigh(model.hamiltonian(eps))
    v = vecs[:, 0]
    return v * np.sign(v[1])


class RampControlProblem(ControlProblem):
    """Phase-sensitive control of the trapped ground state through eps(t).

    The state starts and must end in the ground state at the off-resonant
    endpoint value ``eps_off``, with phase ``phi_target``.  The level
    model is propagated with exact per-step exponentials; the control
    enters only through the molecular diagonal element.
    """

    n_controls = 1
    kind = "real"

    def __init__(self, model: CoupledLevelModel, duration: float, n_steps: int, phi_target: float,
                 eps_off: float):
        self.model = model
        self.duration = float(duration)
        self.n_steps = int(n_steps)
        self.dt = self.duration / self.n_steps
        self.phi_target = float(phi_target)
        self.reference = dressed_ground(model, eps_off)
        self.initial = self.reference.astype(complex)[:, None]
        self.targets = self.initial * np.exp(1j * phi_target)

    def step(self, states, u, dt):
        U, _, _ = step_propagator(self.model.hamiltonian(float(np.ravel(u)[0])), dt)
        return U @ states

    def derivative_overlaps(self, chi, psi, u):
        return np.array([np.sum(chi[0].conj() * psi[0])])

    def sweep(self, states, controls, backward=False):
        out = np.array(states, dtype=complex, copy=True)
        E0 = np.asarray(controls, dtype=float).reshape(-1)
        order = range(self.n_steps - 1, -1, -1) if backward else range(self.n_steps)
        h = -self.dt if backward else self.dt
        for k in order:
            U, _, _ = step_propagator(self.model.hamiltonian(E0[k]), h)
            out = U @ out
        return out

    def amplitude(self, controls) -> complex:
        return complex(np.vdot(self.reference, self.final_states(controls)[:, 0]))


def adiabatic_phase(model: CoupledLevelModel, eps: np.ndarray, dt: float) -> float:
    """-2 pi * integral of the ground-level energy along the sampled ramp."""
    E = np.array([linalg.eigvalsh(model.hamiltonian(e))[0] for e in eps])
    return float(-2.0 * math.pi * np.sum(E) * dt)


def sine_ramp(n_steps: int, eps_off: float, eps_min: float) -> np.ndarray:
    """eps_off -> eps_min -> eps_off with a sin^2 profile on step midpoints."""
    s = (np.arange(n_steps) + 0.5) / n_steps
    return eps_off + (eps_min - eps_off) * np.sin(np.pi * s) ** 2


@dataclass
class RampOptimization:
    eps: np.ndarray
    times: np.ndarray
    infidelity: float
    phase: float
    phase_error: float
    result: OptimizationResult
    model: CoupledLevelModel = field(repr=False)
    reference: np.ndarray = field(repr=False, default=None)

    def trajectory(self):
        """Per-sample (t, eps, pop_00, pop_M, phase) along the optimized ramp.

        pop_00 and phase refer to the trapped pair ground level, pop_M to
        the molecular level.
        """
        psi = self.reference.astype(complex)
        dt = self.times[1] - self.times[0]
        rows = [(0.0, self.eps[0], abs(psi[1]) ** 2, abs(psi[0]) ** 2, 0.0)]
        phase = 0.0
        prev = 0.0
        for k, e in enumerate(self.eps):
            U, _, _ = step_propagator(self.model.hamiltonian(e), dt)
            psi = U @ psi
            ang = float(np.angle(psi[1]))
            phase += (ang - prev + math.pi) % (2 * math.pi) - math.pi
            prev = ang
            rows.append((self.times[k + 1], e, abs(psi[1]) ** 2, abs(psi[0]) ** 2, phase))
        return rows

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "epsilon", "pop_00", "pop_M", "phase"])
            for row in self.trajectory():
                w.writerow([repr(float(v)) for v in row])
        return path


def gate_ramp_model(nu: float = 1e5, gamma: float = 10.0, channel: str = "00", n_levels: int = 5,
                    species: str = "Rb") -> CoupledLevelModel:
    """Molecular level plus the lowest even axial levels of a cigar trap."""
    return build_level_model(n_levels, TrapSpec(nu, gamma, species), preset(channel))


def optimize_ramp(model: CoupledLevelModel, phi_target: float = math.pi, duration: float = 1.0,
                  n_steps: int = 1000, eps_off: float = 20.0, config: OptimizerConfig | None = None,
                  callback=None) -> RampOptimization:
    """Shape eps(t) so that the trap ground state returns with phase ``phi_target``.

    The start guess is a sin^2 ramp whose depth is chosen by bisection
    so that the adiabatic ground-state phase equals the target; the
    feedback loop then removes non-adiabatic losses and the residual
    phase error, with the ramp endpoints pinned at ``eps_off``.

    Raises:
        RuntimeError: if the loop stops above the threshold.
    """
    dt = duration / n_steps
    want = phi_target % (2 * math.pi) or 2 * math.pi

    def phase_of(depth):
        return adiabatic_phase(model, sine_ramp(n_steps, eps_off, depth), dt)

    lo, hi = eps_off, -float(np.max(np.abs(model.couplings))) * 4
    if phase_of(hi) < want:
        raise RuntimeError("target phase not reachable by an adiabatic start guess; lengthen the ramp")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if phase_of(mid) < want:
            lo = mid
        else:
            hi = mid
    guess = sine_ramp(n_steps, eps_off, 0.5 * (lo + hi))[:, None]
    problem = RampControlProblem(model, duration, n_steps, phi_target, eps_off)
    config = config or OptimizerConfig(threshold=1e-7, max_iter=300, lam_bracket=(0.03, 0.1, 0.3))
    res = optimize(problem, guess, config, callback)
    amp = problem.amplitude(res.controls)
    phase = float(np.angle(amp))
    err = abs((phase - phi_target + math.pi) % (2 * math.pi) - math.pi)
    out = RampOptimization(res.controls[:, 0], np.linspace(0.0, duration, n_steps + 1),
                           float(1.0 - abs(amp) ** 2), phase, err, res, model, problem.reference)
    if not res.converged:
        raise RuntimeError(f"ramp optimization stopped at objective {res.objective:.3g}")
    return out


# -- conditional splitting --------------------------------------------------

@dataclass
class ConditionalSplitting:
    """Energy splitting of each two-atom spin state.

    ``labels`` are (S, m_S); ``relative_ground`` is the probability that
    the relative motion is in its ground state.
    """

    labels: tuple[tuple[int, int], ...]
    splittings: np.ndarray
    relative_ground: np.ndarray
    V0: float


def _ladder(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim)), 1)


def conditional_splitting(trap: TrapSpec, p, dim: int = 4) -> ConditionalSplitting:
    """Dressing of the symmetrized states of two bosons in axial levels 0 and 1.

    Only the spin state |0>|0> couples to the resonance, and only through
    the relative-motion ground state, whose weight is read off with the
    relative number operator b^dag b, b = (a1 - a2)/sqrt(2).

    Args:
        trap: trap frequencies (gamma sets the cigar coupling).
        p: resonance parameters of the |00> channel.
        dim: single-particle axial truncation.
    """
    a = _ladder(dim)
    eye = np.eye(dim)
    a1, a2 = np.kron(a, eye), np.kron(eye, a)
    b = (a1 - a2) / math.sqrt(2.0)
    nrel = b.conj().T @ b
    vac = np.zeros(dim * dim)
    vac[0] = 1.0
    sym = (a1.T + a2.T) @ vac / math.sqrt(2.0)
    anti = (a1.T - a2.T) @ vac / math.sqrt(2.0)
    # spin part: (S, m) -> (spatial state, weight of spin |00>)
    states = {(0, 0): (anti, 0.0), (1, -1): (sym, 1.0), (1, 0): (sym, 0.0), (1, 1): (sym, 0.0)}
    V0 = coupling_cigar(0, trap, p) if trap.gamma != 1.0 else coupling_isotropic(0, trap, p)
    labels = tuple(states)
    # single-quantum states: relative number is 0 or 1
    rel0 = np.array([1.0 - float(v @ nrel @ v) for v, _ in states.values()])
    spin = np.array([w for _, w in states.values()])
    return ConditionalSplitting(labels, 2.0 * abs(V0) * rel0 * spin, rel0, V0)
