"""Plane-wave band structure, Wannier functions and cell levels."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markerqc.bands import (BlochProblem, band_structure, bloch_matrix, converged_cutoff,
                            instantaneous_levels, natural_lattice_constant, quasi_momenta, wannier,
                            wannier_to_csv)
from markerqc.lattice import LatticeControls
from markerqc.tdse import SpatialGrid

from oracles import fd_bloch_extrapolated


@pytest.fixture(scope="module")
def deep_bands():
    return band_structure(LatticeControls(V=100.0), M=32, n_bands=2)


@pytest.fixture(scope="module")
def grid():
    return SpatialGrid.lattice(periods=8, points_per_period=128)


class TestBlochProblem:
    def test_quasi_momenta(self):
        k = quasi_momenta(4, math.pi)
        np.testing.assert_allclose(k, [-1.0, -0.5, 0.0, 0.5])

    def test_odd_site_count_rejected(self):
        with pytest.raises(ValueError, match="even"):
            quasi_momenta(5, math.pi)

    def test_cutoff_floor(self):
        with pytest.raises(ValueError, match="cutoff"):
            BlochProblem(LatticeControls(), cutoff=8)

    def test_short_cell_needs_symmetric_lattice(self):
        with pytest.raises(ValueError, match="U2 = 0"):
            BlochProblem(LatticeControls(u1=0.5), lattice_constant=math.pi)

    @pytest.mark.parametrize("u1, a", [(0.0, math.pi), (0.3, 2 * math.pi)])
    def test_natural_cell(self, u1, a):
        assert natural_lattice_constant(LatticeControls(u1=u1)) == a

    @given(st.floats(0, 1), st.floats(-1, 1), st.floats(0, 150), st.floats(-0.5, 0.5))
    @settings(max_examples=40)
    def test_matrix_is_hermitian(self, u1, u2, V, k):
        H = bloch_matrix(BlochProblem(LatticeControls(u1, u2, V=V), k, 16))
        np.testing.assert_allclose(H, H.conj().T, atol=1e-12)

    def test_free_particle(self):
        # V = 0: energies are the lowest (k - G)^2
        bs = band_structure(LatticeControls(V=0.0), M=8, n_bands=4)
        for ik, k in enumerate(bs.ks):
            free = np.sort((k - 2.0 * np.arange(-4, 5)) ** 2)[:4]
            np.testing.assert_allclose(bs.energies[ik], free, atol=1e-12)

    def test_cutoff_convergence(self):
        Q = converged_cutoff(LatticeControls(0.4, 0.2, V=100.0))
        assert 16 <= Q <= 64


class TestBands:
    @pytest.mark.parametrize("k_index", [0, 3, 7])
    def test_matches_finite_differences(self, k_index):
        c = LatticeControls(0.2, -0.4, 1, 0, 40.0)
        bs = band_structure(c, M=8, n_bands=4)
        ref = fd_bloch_extrapolated(c, bs.a, bs.ks[k_index])
        np.testing.assert_allclose(bs.energies[k_index], ref, atol=1e-6)

    def test_deep_lattice_bands_are_flat(self, deep_bands):
        flat = deep_bands.flatness()
        assert flat[0] < 1e-6
        shallow = band_structure(LatticeControls(V=10.0), M=32, n_bands=1).flatness()
        assert shallow[0] > 1e-3

    def test_harmonic_spacing(self, deep_bands):
        # V cos^2 x has curvature 2V at a site, so omega = sqrt(4V) = 20 E_r;
        # the quartic correction lowers the gap by about one recoil
        gap = deep_bands.energies[0, 1] - deep_bands.energies[0, 0]
        assert gap == pytest.approx(math.sqrt(400.0) - 1.0, abs=0.2)

    def test_csv(self, deep_bands, tmp_path):
        path = deep_bands.to_csv(tmp_path / "b.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "k,band,energy"
        assert len(lines) == 1 + 32 * 2

    def test_cell_levels_fold_into_pairs(self):
        # the 2 pi cell holds two equivalent sites when u1 = u2 = 0
        E, _ = instantaneous_levels(LatticeControls(V=100.0), 4)
        assert E[1] - E[0] < 1e-6
        assert E[3] - E[2] < 1e-4
        assert E[2] - E[1] > 10.0


class TestWannier:
    def test_normalized_and_localized(self, deep_bands, grid):
        for band in (0, 1):
            w = wannier(deep_bands, band, math.pi / 2, grid)
            assert w.norm == pytest.approx(1.0)
            inside = np.abs(grid.x - math.pi / 2) < math.pi / 2
            assert np.sum(np.abs(w.psi[inside]) ** 2) * grid.dx > 0.999

    def test_orthogonality(self, deep_bands, grid):
        a = wannier(deep_bands, 0, math.pi / 2, grid)
        b = wannier(deep_bands, 0, 3 * math.pi / 2, grid)
        c = wannier(deep_bands, 1, 3 * math.pi / 2, grid)
        assert abs(a.inner(b)) < 1e-6
        assert abs(a.inner(c)) < 1e-6
        assert abs(b.inner(c)) < 1e-6

    def test_parity(self, deep_bands, grid):
        # even site potential: band 0 even, band 1 odd about the site
        s = 3 * math.pi / 2
        xr = 2 * s - grid.x
        keep = (xr >= grid.x[0]) & (xr <= grid.x[-1])
        for band, sign in ((0, 1.0), (1, -1.0)):
            w = wannier(deep_bands, band, s, grid).psi
            mirrored = np.interp(xr[keep], grid.x, w.real)
            np.testing.assert_allclose(mirrored, sign * w.real[keep], atol=1e-6)

    def test_grid_longer_than_supercell(self, deep_bands):
        with pytest.raises(ValueError, match="supercell"):
            wannier(deep_bands, 0, math.pi / 2, SpatialGrid.lattice(periods=40))

    def test_csv(self, deep_bands, grid, tmp_path):
        w = wannier(deep_bands, 0, math.pi / 2, grid)
        data = np.loadtxt(wannier_to_csv(tmp_path / "w.csv", w), delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 0], grid.x)
        np.testing.assert_array_equal(data[:, 1] + 1j * data[:, 2], w.psi)
