"""Reciprocal-space energies checked against real-space sums and identities."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crystalgs import energy_engine as ee
from crystalgs import lattice_algebra as la
from crystalgs import spectral_profile as sp
from crystalgs.errors import InvalidParameter, ToleranceUnreachable, Unsupported
from crystalgs.gsc_verifier import points_in_ball

K0 = 2.0 * math.pi


def random_unimodular(rng, d, size=0.15):
    a = rng.normal(0.0, size, (d, d))
    m = np.eye(d) + a
    return m / abs(np.linalg.det(m)) ** (1.0 / d)


class TestPeriodizedPotential:
    def test_matches_image_sum_3d(self, bump3, rho3):
        cell = la.PeriodCell(la.scale_to_density(la.named_lattice("sc"), rho3).basis, (2, 2, 2))
        r = np.array([[0.1, 0.2, -0.3], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
        recip = ee.periodized_phi(bump3, cell, r)
        direct = ee.periodized_phi_direct(bump3, cell, r, images=5)
        np.testing.assert_allclose(recip, direct, atol=1e-7 * bump3.phi_at_zero)

    def test_matches_image_sum_1d(self, bump1):
        cell = la.PeriodCell(la.LatticeBasis([[0.8]]), (3,))
        r = np.linspace(0.0, 2.4, 13)[:, None]
        recip = ee.periodized_phi(bump1, cell, r)
        direct = ee.periodized_phi_direct(bump1, cell, r, images=40)
        np.testing.assert_allclose(recip, direct, atol=1e-9 * bump1.phi_at_zero)

    def test_periodic(self, cos_r4, rng):
        cell = la.PeriodCell(la.named_lattice("bcc", 1.3).basis, (2, 1, 3))
        r = rng.normal(size=(5, 3))
        shift = np.array([1, -2, 1]) @ cell.generators
        np.testing.assert_allclose(ee.periodized_phi(cos_r4, cell, r + shift),
                                   ee.periodized_phi(cos_r4, cell, r), rtol=1e-10, atol=1e-10)


@pytest.fixture(scope="module")
def cell(rho3):
    return la.PeriodCell(la.scale_to_density(la.named_lattice("bcc"), rho3).basis, (2, 2, 2))


class TestBoxEnergy:
    def test_single_particle(self, bump3, cell):
        u = ee.box_energy(bump3, cell, np.zeros((1, 3)))
        assert abs(u.energy) < 1e-15 * bump3.phi_at_zero

    def test_pair_is_periodized_phi(self, cos_r4, cell, rng):
        for _ in range(5):
            p = rng.random((2, 3)) @ cell.generators
            u = ee.box_energy(cos_r4, cell, p)
            assert u.energy == pytest.approx(ee.periodized_phi(cos_r4, cell, p[0] - p[1]), rel=1e-10, abs=1e-9)

    def test_brute_force_pairs(self, bump3, cell, rng):
        # U = 1/2 sum_{i != j} phi_Lambda(r_i - r_j)
        p = rng.random((5, 3)) @ cell.generators
        diffs = (p[:, None, :] - p[None, :, :])[~np.eye(5, dtype=bool)]
        brute = 0.5 * np.sum(ee.periodized_phi_direct(bump3, cell, diffs, images=4))
        assert ee.box_energy(bump3, cell, p).energy == pytest.approx(brute, abs=1e-7 * bump3.phi_at_zero)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 20))
    def test_floor_and_invariances(self, bump3, cell, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.random((n, 3))
        u = ee.box_energy(bump3, cell, x, fractional=True)
        assert u.structure_term >= 0.0
        assert u.floor == pytest.approx(ee.box_floor(bump3, cell, n), rel=1e-14)
        shifted = ee.box_energy(bump3, cell, x + rng.random(3), fractional=True)
        permuted = ee.box_energy(bump3, cell, x[rng.permutation(n)], fractional=True)
        tol = 1e-12 * max(1.0, abs(u.energy))
        assert shifted.energy == pytest.approx(u.energy, abs=tol)
        assert permuted.energy == pytest.approx(u.energy, abs=tol)

    def test_lattice_reaches_floor(self, bump3, cell, bcc_threshold):
        x = cell.configuration_points(bcc_threshold)
        u = ee.box_energy(bump3, cell, x, fractional=True)
        assert u.residual() < 1e-28
        assert u.structure_term < 1e-14 * abs(u.floor)

    def test_cartesian_and_fractional_agree(self, cos_r4, cell, rng):
        x = rng.random((6, 3))
        a = ee.box_energy(cos_r4, cell, x, fractional=True).energy
        b = ee.box_energy(cos_r4, cell, cell.to_cartesian(x) + cell.generators[0]).energy
        assert a == pytest.approx(b, rel=1e-11)

    def test_mu_lambda_converges(self, bump3, rho3):
        basis = la.scale_to_density(la.named_lattice("sc"), rho3).basis
        errs = [abs(ee.mu_lambda(bump3, la.PeriodCell(basis, (m,) * 3), 0.0)) for m in (2, 4, 8)]
        assert errs[2] < errs[1] < errs[0]
        assert errs[2] < 1e-3 * bump3.phi_at_zero


class TestEnergyDensity:
    @pytest.mark.parametrize("name", ["bcc", "fcc", "sc", "sh", "hcp"])
    @pytest.mark.parametrize("factor", [1.0, 1.7, 3.0])
    def test_plateau(self, bump3, cos_r4, name, factor):
        cfg = la.scale_to_density(la.named_lattice(name), factor * la.threshold_closed_form(name, K0))
        for pot in (bump3, cos_r4):
            rep = ee.energy_density(pot, cfg)
            assert rep.energy_density == pytest.approx(rep.plateau, rel=1e-12)
            assert rep.shells == []

    def test_inadmissible_exceeds_plateau(self, bump3, rho3):
        cfg = la.scale_to_density(la.named_lattice("fcc"), rho3)
        rep = ee.energy_density(bump3, cfg)
        assert not cfg.is_admissible(K0)
        assert rep.excess > 0 and rep.energy_density > rep.plateau

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), name=st.sampled_from(["bcc", "fcc", "sc"]))
    def test_box_route_agrees(self, cos_r4, seed, name):
        rng = np.random.default_rng(seed)
        cfg = la.named_lattice(name).transformed(random_unimodular(rng, 3, 0.1))
        cfg = la.scale_to_density(cfg, rng.uniform(0.5, 2.0) * la.threshold_closed_form(name, K0))
        direct = ee.energy_density(cos_r4, cfg).energy_density
        boxed = ee.energy_density_from_box(cos_r4, cfg, (2, 2, 2))
        assert boxed == pytest.approx(direct, rel=1e-10, abs=1e-10 * cos_r4.phi_at_zero)

    def test_offsets_in_1d(self, bump1):
        # a chain with two evenly spaced offsets is the chain of half spacing
        rho1 = la.threshold_closed_form("chain", K0)
        pair = la.PeriodicConfiguration(la.LatticeBasis([[2.0 / rho1]]), [[0.0], [1.0 / rho1]])
        chain = la.scale_to_density(la.named_lattice("chain"), rho1)
        assert ee.energy_density(bump1, pair).energy_density == pytest.approx(
            ee.energy_density(bump1, chain).energy_density, rel=1e-12)

    def test_report_files(self, bump3, rho3, tmp_path):
        cfg = la.scale_to_density(la.named_lattice("sc"), rho3)
        rep = ee.energy_density(bump3, cfg)
        rep.write_json(tmp_path / "e.json")
        rep.write_shell_csv(tmp_path / "s.csv")
        doc = json.loads((tmp_path / "e.json").read_text())
        assert doc["energy_density"] == rep.energy_density
        assert len((tmp_path / "s.csv").read_text().splitlines()) == len(rep.shells) + 1
        assert math.fsum(rep.parts()) == pytest.approx(rep.energy_density, rel=1e-14)


class TestRealSpaceOracle:
    def test_bcc_3d(self, bump3, bcc_threshold):
        res = ee.realspace_energy_oracle(bump3, bcc_threshold, 40.0 / K0, tolerance=1e-6)
        e = ee.energy_density(bump3, bcc_threshold).energy_density
        assert abs(res.value - e) <= res.tail_bound
        assert res.tail_bound <= 1e-6 * abs(e)

    def test_chain_1d(self, bump1):
        cfg = la.scale_to_density(la.named_lattice("chain"), 1.4 * la.threshold_closed_form("chain", K0))
        res = ee.realspace_energy_oracle(bump1, cfg, 60.0 / K0)
        e = ee.energy_density(bump1, cfg).energy_density
        assert abs(res.value - e) <= res.tail_bound

    def test_triangle_chain_tail(self, triangle1):
        # slowly decaying 1/x^2 potential: the bound is loose but honest
        cfg = la.scale_to_density(la.named_lattice("chain"), 1.3)
        res = ee.realspace_energy_oracle(triangle1, cfg, 400.0)
        e = ee.energy_density(triangle1, cfg).energy_density
        assert abs(res.value - e) <= res.tail_bound

    def test_unreachable(self, bump3, bcc_threshold):
        with pytest.raises(ToleranceUnreachable):
            ee.realspace_energy_oracle(bump3, bcc_threshold, 10.0 / K0, tolerance=1e-6)
        flat = sp.PairPotential(sp.polynomial_profile([1.0], K0, 3))
        with pytest.raises(ToleranceUnreachable):
            ee.realspace_tail_bound(flat, 1.0, 10.0)

    @pytest.mark.parametrize("maker, d, p", [
        (lambda: sp.triangle_profile(K0, 1), 1, 2.0),
        (lambda: sp.polynomial_profile([1.0], K0, 3), 3, 2.0),
        (lambda: sp.cos_r4_profile(K0), 3, 4.0),
        (lambda: sp.polynomial_profile([K0 ** 2, 0.0, -1.0], K0, 2), 2, 2.5),
    ])
    def test_decay_exponent(self, maker, d, p):
        assert ee.decay_exponent(maker()) == p


class TestField:
    def test_constant_on_bcc(self, bump3, bcc_threshold, rng):
        r = rng.normal(size=(200, 3)) * 3.0
        rep = ee.external_field(bump3, bcc_threshold, r)
        assert rep.max_deviation <= 1e-12 * rep.reference

    def test_matches_direct_sum(self, bump3, rho3):
        cfg = la.scale_to_density(la.named_lattice("fcc"), rho3)
        r = np.array([[0.13, 0.27, 0.05]])
        rep = ee.external_field(bump3, cfg, r)
        pts = points_in_ball(cfg, 45.0 / K0, r[0])
        direct = np.sum(bump3(np.linalg.norm(pts - r[0], axis=1)))
        assert rep.values[0] == pytest.approx(direct, rel=1e-6)

    def test_not_flat_when_inadmissible(self, cos_r4, rho3):
        cfg = la.scale_to_density(la.named_lattice("fcc"), rho3)
        grid = np.random.default_rng(1).random((50, 3))
        rep = ee.external_field(cos_r4, cfg, grid)
        assert rep.max_deviation > 1e-3 * rep.reference

    def test_union_is_additive(self, cos_r4, rho3, rng):
        a = la.scale_to_density(la.named_lattice("bcc"), 1.2 * rho3)
        b = la.scale_to_density(la.named_lattice("sc"), 1.1 * la.threshold_closed_form("sc", K0))
        r = rng.normal(size=(20, 3))
        rep = ee.union_field(cos_r4, [a, b], r)
        assert rep.reference == pytest.approx((a.density + b.density) * cos_r4.phi_hat_at_zero)
        assert rep.max_deviation <= 1e-10 * rep.reference


class TestThermodynamics:
    def test_legendre_pair(self, cos_r4):
        rep = ee.legendre_check(cos_r4, [0.0, 0.3, 0.7071, 1.5])
        assert rep.max_error <= 1e-6
        assert rep.stationary

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(0.01, 100.0), b=st.floats(0.0, 100.0), rho=st.floats(0.0, 5.0))
    def test_legendre_parametric(self, a, b, rho):
        rep = ee.legendre_check((a, b), [rho])
        scale = max(1.0, abs(ee.e_rho(rho, a, b)))
        assert rep.max_error <= 1e-9 * scale * max(1.0, a, 1.0 / a)
        assert rep.stationary

    def test_roundtrip(self, cos_r4):
        t = ee.thermodynamics(cos_r4, rho=0.9)
        back = ee.thermodynamics(cos_r4, mu=t.mu)
        assert back.rho == pytest.approx(0.9, rel=1e-14)
        # e(rho) = e(mu) + mu rho at the linked pair
        assert t.e_rho == pytest.approx(t.e_mu + t.mu * t.rho, rel=1e-12)

    def test_zero_density_mu_above_threshold(self, cos_r4, rho3):
        assert cos_r4.phi_at_zero / (2 * cos_r4.phi_hat_at_zero) > rho3

    def test_errors(self, cos_r4):
        with pytest.raises(InvalidParameter):
            ee.thermodynamics(cos_r4)
        with pytest.raises(InvalidParameter):
            ee.thermodynamics(cos_r4, rho=1.0, mu=1.0)
        with pytest.raises(Unsupported):
            ee.legendre_check((0.0, 1.0), [1.0])
        with pytest.raises(Unsupported):
            ee.e_mu(1.0, 0.0, 1.0)
        with pytest.raises(InvalidParameter):
            ee.as_potential("bcc")
