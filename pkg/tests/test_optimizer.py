"""Box-energy minimisation, gradients and structure-factor tables."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crystalgs import energy_engine as ee
from crystalgs import lattice_algebra as la
from crystalgs import optimizer as opt
from crystalgs.errors import InvalidParameter, OptimizerFailed

K0 = 2.0 * math.pi


def cubic_bcc(rho):
    a = (2.0 / rho) ** (1.0 / 3.0)
    return la.PeriodicConfiguration(la.LatticeBasis(np.eye(3) * a), [[0, 0, 0], [a / 2, a / 2, a / 2]])


@pytest.fixture(scope="module")
def dense_cell(rho3):
    return la.PeriodCell(cubic_bcc(3.0 * rho3).basis, (2, 2, 2))


def central_difference(model, frac, h):
    inv = np.linalg.inv(model.cell.generators)
    g = np.zeros_like(frac)
    for i in range(frac.shape[0]):
        for a in range(frac.shape[1]):
            e = np.zeros_like(frac)
            e[i] = (h * np.eye(frac.shape[1])[a]) @ inv
            g[i, a] = (model.energy(frac + e) - model.energy(frac - e)) / (2 * h)
    return g


class TestGradient:
    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 12))
    def test_finite_differences(self, cos_r4, dense_cell, seed, n):
        model = opt.BoxModel(cos_r4, dense_cell)
        frac = np.random.default_rng(seed).random((n, 3))
        _, g = model.energy_and_gradient(frac)
        fd = central_difference(model, frac, 1e-5)
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(1.0, np.max(np.abs(g)))

    def test_translation_sums_to_zero(self, cos_r4, dense_cell, rng):
        g = opt.gradient(cos_r4, dense_cell, rng.random((9, 3)), fractional=True)
        assert np.max(np.abs(g.sum(axis=0))) <= 1e-10 * np.max(np.abs(g))

    def test_zero_at_lattice(self, cos_r4, dense_cell, rho3):
        x = dense_cell.configuration_points(cubic_bcc(3.0 * rho3))
        g = opt.gradient(cos_r4, dense_cell, x, fractional=True)
        assert np.max(np.abs(g)) < 1e-9

    def test_energy_matches_box(self, cos_r4, dense_cell, rng):
        x = rng.random((7, 3))
        assert opt.energy(cos_r4, dense_cell, x, fractional=True) == pytest.approx(
            ee.box_energy(cos_r4, dense_cell, x, fractional=True).energy, rel=1e-12)


class TestMinimize:
    @pytest.mark.parametrize("method", opt.METHODS)
    def test_reaches_floor(self, cos_r4, dense_cell, method):
        run = opt.minimize(cos_r4, dense_cell, 16, method=method, seed=11)
        assert run.converged
        assert run.floor_gap < 1e-8 * abs(run.floor)
        assert run.residual < 1e-10
        assert run.final_energy >= run.floor
        assert min(run.trajectory) >= run.floor

    def test_seeded(self, cos_r4, dense_cell):
        a = opt.minimize(cos_r4, dense_cell, 16, seed=5)
        b = opt.minimize(cos_r4, dense_cell, 16, seed=5)
        np.testing.assert_array_equal(a.final, b.final)

    def test_initial_positions(self, cos_r4, dense_cell, rho3):
        x = dense_cell.configuration_points(cubic_bcc(3.0 * rho3))
        run = opt.minimize(cos_r4, dense_cell, 16, initial=x)
        assert run.iterations == 0 and run.converged

    def test_floor_guard(self):
        guard = opt._FloorGuard(-3.0)
        assert guard(0.0) == 0.0
        with pytest.raises(OptimizerFailed):
            guard(-1e-30)

    def test_bad_arguments(self, cos_r4, dense_cell):
        with pytest.raises(InvalidParameter):
            opt.minimize(cos_r4, dense_cell, 0)
        with pytest.raises(InvalidParameter):
            opt.minimize(cos_r4, dense_cell, 4, method="newton")

    def test_outputs(self, cos_r4, dense_cell, tmp_path):
        run = opt.minimize(cos_r4, dense_cell, 16, seed=1)
        run.write_json(tmp_path / "r.json")
        run.write_positions_csv(tmp_path / "p.csv")
        run.write_trajectory_csv(tmp_path / "t.csv")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["N"] == 16 and doc["converged"]
        assert len((tmp_path / "p.csv").read_text().splitlines()) == 17


class TestStructureFactors:
    @pytest.mark.parametrize("name, mult", [("bcc", (2, 2, 2)), ("fcc", (3, 3, 3)), ("hcp", (2, 2, 3)),
                                            ("triangular", (4, 3))])
    def test_factorization(self, name, mult):
        cfg = la.named_lattice(name)
        cell = la.PeriodCell(cfg.basis, mult)
        res = opt.factorization_check(cell, cfg, 3.0 * cfg.q)
        assert res.max_deviation < 1e-12
        assert 1 < res.in_sublattice < res.total

    def test_hcp_extinction(self):
        # the axial reciprocal vector b3 sees the two hcp layers in antiphase
        hcp = la.named_lattice("hcp")
        cell = la.PeriodCell(hcp.basis, (1, 1, 1))
        sf = opt.structure_factor_map(cell, cell.configuration_points(hcp), 1.01 * np.linalg.norm(
            hcp.reciprocal.generators[2]), fractional=True)
        axial = np.all(sf.labels == [0, 0, 1], axis=1)
        assert axial.sum() == 1
        assert sf.s2[axial][0] < 1e-28

    def test_map_csv(self, tmp_path, rho3, dense_cell):
        x = dense_cell.configuration_points(cubic_bcc(3.0 * rho3))
        sf = opt.structure_factor_map(dense_cell, x, K0, fractional=True)
        assert sf.s2[0] == pytest.approx(16 ** 2)
        assert np.all(sf.s2[1:] < 1e-26)
        sf.write_csv(tmp_path / "s.csv")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == len(sf.s2) + 1
