"""Time-dependent optical superlattice.

The one-dimensional potential is

    U(x) = U0 + U1 cos(2x) + U2 cos(x - phi)

in recoil units with x measured in 1/kappa.  The amplitudes are driven
by two dimensionless controls u1, u2 together with the discrete
direction flags sigma and l:

    U0 = V (2 - u1 + u2) / 4
    U1 = V (2 - u1 - u2) / 4
    U2 = V sqrt(u1^2 + u2^2) / 2
    phi = sigma * arctan(u2 / u1) + l * pi

Written in Cartesian form, U2 cos(x - phi) = (-1)^l V/2 (u1 cos x + sigma u2 sin x),
so the potential is affine in (u1, u2).  That form is used for all
numerics; it removes the arctan singularity at u1 = u2 = 0.
"""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LatticeControls:
    """Instantaneous lattice control state.

    Attributes:
        u1: Barrier control, nominally in [0, 1].
        u2: Well-offset control, nominally in [-1, 1].
        sigma: +1 raises the left well of each double well, -1 the right one.
        l: 0 modifies the barriers at x = (2j+1)pi, 1 those at x = 2j pi.
        V: Lattice depth in E_r.
        kappa: Lattice wavenumber; only used when converting to SI lengths.
    """

    u1: float = 0.0
    u2: float = 0.0
    sigma: int = 1
    l: int = 0
    V: float = 100.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.sigma not in (1, -1):
            raise ValueError(f"sigma must be +1 or -1, got {self.sigma}")
        if self.l not in (0, 1):
            raise ValueError(f"l must be 0 or 1, got {self.l}")
        if not self.V >= 0:
            raise ValueError(f"V must be non-negative, got {self.V}")

    def with_controls(self, u1: float, u2: float) -> "LatticeControls":
        return replace(self, u1=float(u1), u2=float(u2))


def controls_to_amplitudes(c: LatticeControls) -> tuple[float, float, float, float]:
    """Return (U0, U1, U2, phi) for the given controls.

    At u1 = u2 = 0 the phase is defined as l*pi; it multiplies U2 = 0 there.
    """
    V = c.V
    U0 = V * (2.0 - c.u1 + c.u2) / 4.0
    U1 = V * (2.0 - c.u1 - c.u2) / 4.0
    U2 = 0.5 * V * math.hypot(c.u1, c.u2)
    if c.u1 == 0.0 and c.u2 == 0.0:
        phi = c.l * math.pi
    else:
        # atan2 agrees with sigma*arctan(u2/u1) for u1 > 0 and extends it smoothly
        phi = math.atan2(c.sigma * c.u2, c.u1) + c.l * math.pi
    return U0, U1, U2, phi


def potential_coefficients(c: LatticeControls) -> tuple[float, float, float, float]:
    """Coefficients (a0, a2, ac, as_) with U(x) = a0 + a2 cos 2x + ac cos x + as_ sin x."""
    V = c.V
    parity = -1.0 if c.l else 1.0
    a0 = V * (2.0 - c.u1 + c.u2) / 4.0
    a2 = V * (2.0 - c.u1 - c.u2) / 4.0
    ac = parity * 0.5 * V * c.u1
    as_ = parity * c.sigma * 0.5 * V * c.u2
    return a0, a2, ac, as_


def evaluate_potential(c: LatticeControls, x):
    """Superlattice potential U(x) in E_r, x in units of 1/kappa."""
    x = np.asarray(x, dtype=float)
    a0, a2, ac, as_ = potential_coefficients(c)
    return a0 + a2 * np.cos(2.0 * x) + ac * np.cos(x) + as_ * np.sin(x)


def potential_basis(x, V: float, sigma: int, l: int):
    """Split U(x; u1, u2) = base + u1 * d1 + u2 * d2.

    Returns the three arrays (base, d1, d2); d1 and d2 are the exact
    derivatives dU/du1 and dU/du2, independent of the controls.
    """
    x = np.asarray(x, dtype=float)
    parity = -1.0 if l else 1.0
    cos2 = np.cos(2.0 * x)
    base = 0.5 * V * (1.0 + cos2)
    d1 = -0.25 * V * (1.0 + cos2) + parity * 0.5 * V * np.cos(x)
    d2 = 0.25 * V * (1.0 - cos2) + parity * sigma * 0.5 * V * np.sin(x)
    return base, d1, d2


@dataclass(frozen=True)
class LaserConfig:
    """Four-beam superlattice setup.

    Beams 1, 2 form pair a (wavenumber k_a, detuning delta_a), beams 3, 4
    pair b.  ``dipole`` holds the real projections (d . eps_j).  Energies
    come out in whatever units amplitudes^2 * dipole^2 / detuning carry.
    ``offset`` replaces the constant term when given, since the constant
    only sets the energy zero.
    """

    amplitudes: tuple[float, float, float, float]
    phases: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    theta_a: float = math.pi
    theta_b: float = math.pi / 3
    delta_a: float = 1.0
    delta_b: float = 1.0
    dipole: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    k_a: float = 1.0
    k_b: float = 1.0
    offset: float | None = None

    def __post_init__(self):
        if self.delta_a == 0 or self.delta_b == 0:
            raise ValueError("laser detunings must be nonzero for adiabatic elimination")
        for name in ("theta_a", "theta_b"):
            th = getattr(self, name)
            if not 0.0 < th <= math.pi:
                raise ValueError(f"{name} must lie in (0, pi], got {th}")


def potential_from_lasers(cfg: LaserConfig, x):
    """Light-shift potential of the four-beam setup along the x axis."""
    x = np.asarray(x, dtype=float)
    E = cfg.amplitudes
    d = cfg.dipole
    ph = cfg.phases
    ca = 1.0 / (4.0 * cfg.delta_a)
    cb = 1.0 / (4.0 * cfg.delta_b)
    const = -(ca * (d[0] ** 2 * E[0] ** 2 + d[1] ** 2 * E[1] ** 2)
              + cb * (d[2] ** 2 * E[2] ** 2 + d[3] ** 2 * E[3] ** 2))
    U1 = -ca * d[0] * d[1] * E[0] * E[1]
    U2 = -cb * d[2] * d[3] * E[2] * E[3]
    ka_eff = 2.0 * cfg.k_a * math.sin(cfg.theta_a / 2.0)
    kb_eff = 2.0 * cfg.k_b * math.sin(cfg.theta_b / 2.0)
    if cfg.offset is not None:
        const = cfg.offset
    return (const
            + U1 * np.cos(ka_eff * x + ph[0] - ph[1])
            + U2 * np.cos(kb_eff * x + ph[2] - ph[3]))


def matched_beam_angle(k_a: float, k_b: float) -> float:
    """Pair-b intersection angle giving a lattice period twice that of pair a."""
    return 2.0 * math.asin(k_a / (2.0 * k_b))


def lasers_for_controls(c: LatticeControls, delta: float = -1.0) -> LaserConfig:
    """A laser setup whose potential coincides with ``evaluate_potential(c, .)``.

    Uses counter-propagating pair a, the matched angle for pair b and
    equal-amplitude beams inside each pair; the sign of each cosine is
    carried by an extra pi in the beam phases.
    """
    U0, U1, U2, phi = controls_to_amplitudes(c)
    # U_i = -|E|^2 / (4 delta) for unit dipole factors
    scale = -4.0 * delta
    ea = math.sqrt(abs(U1) * abs(scale))
    eb = math.sqrt(abs(U2) * abs(scale))
    sign_a = 1.0 if U1 * (-1.0 / delta) >= 0 else -1.0
    ph_a = 0.0 if sign_a > 0 else math.pi
    # U2 cos(x - phi) = U2 cos(x + phi3 - phi4) with phi4 - phi3 = phi
    ph_b = (0.0, phi) if (-1.0 / delta) >= 0 else (0.0, phi + math.pi)
    return LaserConfig(
        amplitudes=(ea, ea, eb, eb),
        phases=(ph_a, 0.0, ph_b[0], ph_b[1]),
        theta_a=math.pi,
        theta_b=matched_beam_angle(1.0, 1.0),
        delta_a=delta,
        delta_b=delta,
        k_a=c.kappa,
        k_b=c.kappa,
        offset=U0,
    )


def required_laser_power(reference_power: float, reference_depth: float, target_depth: float) -> float:
    """Laser power needed for ``target_depth`` given one calibration point.

    At fixed intensity-to-detuning ratio the amplitudes scale as sqrt(P).
    """
    if reference_power <= 0 or reference_depth <= 0 or target_depth <= 0:
        raise ValueError("powers and depths must be positive")
    return reference_power * (target_depth / reference_depth) ** 2


@dataclass
class PulseSchedule:
    """Control trajectories u1(t), u2(t) on a uniform time grid.

    ``breakpoints`` are the step boundaries t0 < t1 < t2 < t3 < t4.
    Values between samples are interpolated linearly.
    """

    t: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    sigma: int = 1
    l: int = 0
    V: float = 100.0
    kappa: float = 1.0
    breakpoints: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u2 = np.asarray(self.u2, dtype=float)
        if not (self.t.shape == self.u1.shape == self.u2.shape) or self.t.ndim != 1:
            raise ValueError("t, u1 and u2 must be 1D arrays of equal length")
        if self.t.size < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        self.breakpoints = tuple(float(b) for b in self.breakpoints)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def controls(self, u1: float = 0.0, u2: float = 0.0) -> LatticeControls:
        return LatticeControls(u1=float(u1), u2=float(u2), sigma=self.sigma, l=self.l,
                               V=self.V, kappa=self.kappa)

    def sample(self, times) -> tuple[np.ndarray, np.ndarray]:
        times = np.asarray(times, dtype=float)
        return np.interp(times, self.t, self.u1), np.interp(times, self.t, self.u2)

    def controls_at(self, time: float) -> LatticeControls:
        u1, u2 = self.sample(time)
        return self.controls(float(u1), float(u2))

    def reversed(self) -> "PulseSchedule":
        """Same pulse functions played backwards in time."""
        t0, t_end = self.t[0], self.t[-1]
        return PulseSchedule(
            t=(t0 + t_end - self.t)[::-1],
            u1=self.u1[::-1].copy(),
            u2=self.u2[::-1].copy(),
            sigma=self.sigma, l=self.l, V=self.V, kappa=self.kappa,
            breakpoints=tuple(t0 + t_end - b for b in reversed(self.breakpoints)),
        )

    def with_flags(self, sigma: int, l: int) -> "PulseSchedule":
        return replace(self, sigma=sigma, l=l)

    # -- CSV + sidecar ------------------------------------------------------

    def to_csv(self, path) -> Path:
        """Write ``t,u1,u2`` samples and a ``.cfg`` sidecar with the flags."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "u1", "u2"])
            for row in zip(self.t, self.u1, self.u2):
                writer.writerow([repr(float(v)) for v in row])
        cfg = configparser.ConfigParser()
        cfg["schedule"] = {
            "sigma": str(self.sigma),
            "l": str(self.l),
            "V": repr(float(self.V)),
            "kappa": repr(float(self.kappa)),
            "breakpoints": " ".join(repr(b) for b in self.breakpoints),
        }
        with sidecar_path(path).open("w") as fh:
            cfg.write(fh)
        return path

    @classmethod
    def from_csv(cls, path) -> "PulseSchedule":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != ["t", "u1", "u2"]:
                raise ValueError(f"{path}: expected header t,u1,u2, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.array(rows, dtype=float).reshape(-1, 3)
        meta = {}
        side = sidecar_path(path)
        if side.exists():
            cfg = configparser.ConfigParser()
            cfg.read(side)
            meta = dict(cfg["schedule"]) if cfg.has_section("schedule") else {}
        bps = meta.get("breakpoints", "").split()
        return cls(
            t=data[:, 0], u1=data[:, 1], u2=data[:, 2],
            sigma=int(meta.get("sigma", 1)),
            l=int(meta.get("l", 0)),
            V=float(meta.get("v", 100.0)),
            kappa=float(meta.get("kappa", 1.0)),
            breakpoints=tuple(float(b) for b in bps),
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(path.suffix + ".cfg")


def lattice_maxima(c: LatticeControls, lo: float, hi: float, n: int = 20001) -> list[tuple[float, float]]:
    """Local maxima (x, U) of the potential on [lo, hi], refined by a parabola fit."""
    xs = np.linspace(lo, hi, n)
    u = evaluate_potential(c, xs)
    idx = np.where((u[1:-1] > u[:-2]) & (u[1:-1] >= u[2:]))[0] + 1
    return [_refine(xs, u, i) for i in idx]


def lattice_minima(c: LatticeControls, lo: float, hi: float, n: int = 20001) -> list[tuple[float, float]]:
    xs = np.linspace(lo, hi, n)
    u = evaluate_potential(c, xs)
    idx = np.where((u[1:-1] < u[:-2]) & (u[1:-1] <= u[2:]))[0] + 1
    return [_refine(xs, u, i) for i in idx]


def _refine(xs: np.ndarray, u: np.ndarray, i: int) -> tuple[float, float]:
    h = xs[1] - xs[0]
    a, b, c = u[i - 1], u[i], u[i + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return float(xs[i]), float(b)
    s = 0.5 * (a - c) / denom
    return float(xs[i] + s * h), float(b - 0.25 * (a - c) * s)


def stack_controls(samples: Sequence[LatticeControls]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([s.u1 for s in samples], dtype=float),
            np.array([s.u2 for s in samples], dtype=float))
