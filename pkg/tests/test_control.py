"""Immediate-feedback optimal control: objectives, updates and the lattice problem."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from markerqc.control import (ControlProblem, OptimizerConfig, costate_terminal, endpoint_weight,
                              gradient_kernel, iterate, objective_value, optimize, overlaps,
                              transport_setup, write_history_csv)
from markerqc.tdse import SpatialGrid
from markerqc.transport import AdiabaticProfile, build_adiabatic_schedule, transport_states

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


class TwoLevel(ControlProblem):
    """Spin flip |0> -> |1> driven by u sigma_x against a fixed splitting."""

    n_controls = 1

    def __init__(self, kind="modulus", n_steps=100, duration=5.0):
        self.kind = kind
        self.n_steps = n_steps
        self.dt = duration / n_steps
        self.initial = np.array([[1.0], [0.0]], dtype=complex)
        self.targets = np.array([[0.0], [1.0]], dtype=complex)

    def step(self, states, u, dt):
        return expm(-1j * dt * (0.5 * SZ + u[0] * SX)) @ states

    def derivative_overlaps(self, chi, psi, u):
        return np.array([np.sum(chi.conj() * (SX @ psi))])


@pytest.fixture(scope="module")
def small_setup():
    grid = SpatialGrid.lattice(periods=4, points_per_period=64)
    sched = build_adiabatic_schedule(AdiabaticProfile(T=2.0), check_levels=False)
    return transport_setup(sched, transport_states(100.0, grid), dt=2e-2)


class TestObjective:
    @pytest.mark.parametrize("kind, tau, J", [
        ("modulus", [1.0, 1j], 0.0),
        ("modulus", [0.5, 0.0], 1.75),
        ("real", [1.0, 1j], 1.0),
        ("real", [-1.0, 1.0], 2.0),
    ])
    def test_values(self, kind, tau, J):
        assert objective_value(np.array(tau), kind) == pytest.approx(J)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown objective"):
            objective_value(np.ones(1), "phase")
        with pytest.raises(ValueError, match="unknown objective"):
            costate_terminal(np.ones((2, 1)), np.ones((2, 1)), "phase")

    def test_costates(self):
        f = np.array([[1.0], [0.0]], dtype=complex)
        psi = np.array([[0.6j], [0.8]])
        np.testing.assert_allclose(costate_terminal(psi, f, "modulus"), [[0.6j], [0.0]])
        np.testing.assert_allclose(costate_terminal(psi, f, "real"), [[0.5], [0.0]])

    def test_overlaps_and_kernel(self):
        f = np.array([[1.0, 0.0], [0.0, 1j]])
        psi = np.array([[2.0, 0.0], [0.0, 1.0]], dtype=complex)
        np.testing.assert_allclose(overlaps(f, psi, 0.5), [1.0, -0.5j])
        assert gradient_kernel(np.ones(4), 1j * np.ones(4), np.arange(4.0), 0.5) == pytest.approx(-3j)


class TestEndpointWeight:
    @given(st.integers(50, 5000), st.floats(0.005, 0.2), st.floats(10.0, 1e8))
    @settings(max_examples=40)
    def test_shape(self, n, edge, factor):
        w = endpoint_weight(n, edge, factor)
        assert w.shape == (n,)
        assert np.all(w >= 1.0) and np.all(w <= factor)
        np.testing.assert_allclose(w, w[::-1], rtol=1e-12)
        mid = w[n // 2 - n // 10: n // 2 + n // 10 + 1]
        np.testing.assert_array_equal(mid, 1.0)
        half = w[: n // 2]
        assert np.all(np.diff(half) <= 0)

    def test_edges_large(self):
        w = endpoint_weight(1000, 0.02, 1e6)
        assert w[0] > 1e5


class TestFeedbackLoop:
    @pytest.mark.parametrize("kind", ["modulus", "real"])
    def test_two_level_converges_monotonically(self, kind):
        p = TwoLevel(kind)
        res = optimize(p, np.full((p.n_steps, 1), 0.1), OptimizerConfig(max_iter=200, threshold=1e-4))
        J = [r.objective for r in res.history]
        assert res.converged
        assert np.all(np.diff(J) <= 1e-10)
        # J < threshold bounds |tau| below by 1 - threshold for either objective
        assert res.fidelities[0] >= (1.0 - 1e-4) ** 2

    def test_fixed_lambda(self):
        p = TwoLevel()
        res = optimize(p, np.full((p.n_steps, 1), 0.1), OptimizerConfig(lam=5.0, max_iter=50))
        assert res.iterations >= 1
        assert res.lam >= 5.0

    def test_iterate_rejects_nonpositive_lambda(self):
        p = TwoLevel()
        u = np.zeros((p.n_steps, 1))
        with pytest.raises(ValueError, match="positive"):
            iterate(p, u, p.final_states(u), np.zeros(p.n_steps))

    @pytest.mark.parametrize("kw", [{"lam": 0.0}, {"lam_bracket": (1.0, -1.0, 2.0)}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            OptimizerConfig(**kw)

    def test_history_csv(self, tmp_path):
        p = TwoLevel()
        res = optimize(p, np.full((p.n_steps, 1), 0.1), OptimizerConfig(max_iter=3, threshold=0.0))
        lines = write_history_csv(tmp_path / "h.csv", res, labels=("F",)).read_text().splitlines()
        assert lines[0] == "iter,F,objective"
        assert len(lines) == 1 + len(res.history)


class TestLatticeProblem:
    def test_compiled_sweep_matches_reference(self, small_setup):
        p = small_setup.problem
        u = small_setup.initial_controls
        chi0 = p.sweep(costate_terminal(p.final_states(u), p.targets, p.kind, p.weight), u, backward=True)
        scale = 2.0 / (30.0 * endpoint_weight(p.n_steps))
        fast_u, fast_psi = p.co_sweep(p.initial, chi0, u, scale)
        ref_u, ref_psi = ControlProblem.co_sweep(p, p.initial, chi0, u, scale)
        np.testing.assert_allclose(fast_u, ref_u, atol=1e-12)
        np.testing.assert_allclose(fast_psi, ref_psi, atol=1e-10)

    def test_gradient_matches_finite_differences(self, small_setup):
        p = small_setup.problem
        u = small_setup.initial_controls
        g = p.gradient(u)
        h = 1e-5
        for k, j in [(0, 0), (p.n_steps // 3, 1), (p.n_steps // 2, 0), (p.n_steps - 1, 1)]:
            up, dn = u.copy(), u.copy()
            up[k, j] += h
            dn[k, j] -= h
            fd = (p.objective(up) - p.objective(dn)) / (2 * h)
            assert g[k, j] == pytest.approx(fd, abs=1e-8)

    def test_periodic_grid_rejected(self, small_setup):
        p = small_setup.problem
        grid = SpatialGrid(0.0, 8.0, 64, "periodic")
        with pytest.raises(ValueError, match="hard-wall"):
            type(p)(grid, 100.0, 1, 0, np.zeros((64, 1)), np.zeros((64, 1)), 1.0, 10)

    def test_spliced_schedule(self, small_setup):
        u = small_setup.initial_controls
        s = small_setup.to_schedule(u)
        assert s.breakpoints == small_setup.schedule.breakpoints
        assert np.all(np.diff(s.t) > 0)
        t1, t3 = s.breakpoints[1], s.breakpoints[3]
        np.testing.assert_allclose(s.sample([t1, t3]), small_setup.schedule.sample([t1, t3]), atol=1e-12)

    def test_bad_schedule(self, small_setup):
        s = small_setup.schedule
        from markerqc.lattice import PulseSchedule

        short = PulseSchedule(s.t, s.u1, s.u2, s.sigma, s.l, s.V, breakpoints=(s.t[0], s.t[-1]))
        with pytest.raises(ValueError, match="five breakpoints"):
            transport_setup(short, transport_states(100.0, small_setup.problem.grid))


class TestOptimizedTransport:
    def test_endpoints_stay_pinned(self, optimized_transport):
        setup, res, _ = optimized_transport
        drift = np.abs(res.controls[[0, -1]] - setup.initial_controls[[0, -1]])
        assert drift.max() < 1e-6

    def test_first_iteration_improves(self, optimized_transport):
        _, res, _ = optimized_transport
        assert res.history[1].objective < res.history[0].objective
