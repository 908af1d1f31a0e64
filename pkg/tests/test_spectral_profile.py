"""Radial profiles and their real-space transforms, against closed forms."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import j1

from crystalgs import spectral_profile as sp
from crystalgs.errors import ConstraintViolation, InvalidParameter, InvalidProfile, Unsupported

K0 = 2.0 * math.pi


def triangle_closed_form(x, k0=K0):
    return (1.0 - np.cos(k0 * x)) / (math.pi * x ** 2)


class TestClosedForms:
    def test_triangle_1d(self, triangle1):
        x = np.linspace(0.05, 30.0, 200)
        # both sides lose digits where 1 - cos(K0 x) cancels
        np.testing.assert_allclose(triangle1(x), triangle_closed_form(x), rtol=1e-10, atol=1e-14)

    def test_triangle_phi_at_zero(self, triangle1):
        assert triangle1.phi_at_zero == pytest.approx(K0 ** 2 / (2 * math.pi), rel=1e-13)
        assert triangle1(0.0) == pytest.approx(K0 ** 2 / (2 * math.pi), rel=1e-12)

    def test_flat_disc_2d(self):
        pot = sp.PairPotential(sp.polynomial_profile([1.0], K0, 2))
        r = np.linspace(0.1, 12.0, 60)
        np.testing.assert_allclose(pot(r), K0 * j1(K0 * r) / (2 * math.pi * r), rtol=1e-9, atol=1e-13)

    def test_flat_ball_3d(self):
        pot = sp.PairPotential(sp.polynomial_profile([1.0], K0, 3))
        r = np.linspace(0.1, 12.0, 60)
        x = K0 * r
        expected = (np.sin(x) - x * np.cos(x)) / (2 * math.pi ** 2 * r ** 3)
        np.testing.assert_allclose(pot(r), expected, rtol=1e-9, atol=1e-12)
        assert pot.phi_at_zero == pytest.approx(K0 ** 3 / (6 * math.pi ** 2), rel=1e-13)

    def test_piecewise_equals_polynomial(self):
        # the triangle split at K0/2 is the same function
        pw = sp.piecewise_profile([0.0, K0 / 2, K0], [[K0, -1.0], [K0, -1.0]], 1)
        r = np.linspace(0.0, 20.0, 41)
        np.testing.assert_allclose(sp.eval_phi(pw, r), sp.eval_phi(sp.triangle_profile(K0), r),
                                   rtol=1e-12, atol=1e-14)


class TestLongRange3D:
    def test_cos_r4_asymptotics(self, cos_r4):
        asym = sp.asymptotic_amplitude_3d(cos_r4.profile)
        assert asym.amplitude == pytest.approx(1.3 * K0 ** 3, rel=1e-10)
        assert abs(asym.constant) <= 1e-10 * abs(asym.amplitude)

    def test_direct_and_partial_agree(self, cos_r4):
        r = np.linspace(6.0, 15.0, 25) / K0
        direct = cos_r4(r, method="direct")
        partial = cos_r4(r, method="partial")
        scale = np.max(np.abs(direct))
        np.testing.assert_allclose(partial, direct, rtol=0, atol=1e-9 * scale)

    def test_decay_envelope(self, cos_r4):
        r = np.linspace(30.0, 100.0, 2000) / K0
        amp = cos_r4.asymptotic_amplitude
        resid = r ** 4 * cos_r4(r) - amp * np.cos(K0 * r)
        # the correction is O(1/r)
        assert np.max(np.abs(resid) * K0 * r) < 10.0 * amp

    def test_constraint_violation(self):
        with pytest.raises(ConstraintViolation):
            sp.build_longrange_3d([1.0, 0.0, -1.0 / K0 ** 2], K0)  # f(K0) = 0, f'(K0) != 0
        with pytest.raises(ConstraintViolation):
            sp.build_longrange_3d([1.0], K0)

    def test_partial_needs_longrange(self, triangle1):
        with pytest.raises(Unsupported):
            triangle1(1.0, method="partial")
        with pytest.raises(InvalidParameter):
            triangle1(1.0, method="simpson")


class TestBumpStack:
    def test_normalised_and_supported(self, bump3):
        assert bump3.phi_hat_at_zero == pytest.approx(1.0, abs=1e-15)
        assert bump3.phi_hat(K0) == 0.0
        assert np.all(bump3.phi_hat(np.array([K0 * 1.01, 2 * K0, 10.0 * K0])) == 0.0)

    def test_nonnegative_and_monotone(self, bump3):
        k = np.linspace(0.0, K0, 5001)
        v = bump3.phi_hat(k)
        assert np.all(v >= 0)
        # convolution of centred bumps is radially nonincreasing
        assert np.all(np.diff(v) <= 1e-12)

    def test_no_cone_at_origin(self, bump3):
        # slope of phi_hat at 0 vanishes: phi_hat(h) - 1 = O(h^2)
        h = 1e-4 * K0
        assert abs(bump3.phi_hat(h) - 1.0) < 1e-6

    def test_fast_real_space_decay(self, bump3):
        near = np.abs(bump3(np.linspace(15.0, 20.0, 200) / K0)).max()
        far = np.abs(bump3(np.linspace(40.0, 44.0, 200) / K0)).max()
        assert far < 1e-7 * bump3.phi_at_zero
        assert far < 1e-4 * near

    @pytest.mark.parametrize("d", [1, 2])
    def test_lower_dimensions(self, d, bump1, bump2):
        pot = {1: bump1, 2: bump2}[d]
        assert pot.dimension == d
        assert pot.phi_at_zero > 0
        assert abs(pot(30.0 / K0)) < 1e-4 * pot.phi_at_zero

    def test_needs_two_bumps(self):
        with pytest.raises(InvalidParameter):
            sp.bump_stack_profile(K0, 3, n_bumps=1)


class TestValidation:
    def test_negative_polynomial(self):
        with pytest.raises(InvalidProfile):
            sp.polynomial_profile([-1.0, 1.0], K0, 1)

    def test_negative_table(self):
        with pytest.raises(InvalidProfile):
            sp.tabulated_profile([1.0, -0.5, 0.0], K0, 2)

    @pytest.mark.parametrize("d, cutoff", [(4, 1.0), (3, 0.0), (3, -1.0), (2, math.inf)])
    def test_bad_parameters(self, d, cutoff):
        with pytest.raises(InvalidParameter):
            sp.polynomial_profile([1.0], cutoff, d)

    def test_bad_breaks(self):
        with pytest.raises(InvalidParameter):
            sp.piecewise_profile([0.5, 1.0], [[1.0]], 1)


class TestSerialization:
    @pytest.mark.parametrize("maker", [
        lambda: sp.triangle_profile(K0, 2),
        lambda: sp.cos_r4_profile(K0),
        lambda: sp.piecewise_profile([0.0, 1.0, K0], [[2.0], [2.0, -0.1]], 3),
        lambda: sp.tabulated_profile(np.linspace(1.0, 0.0, 33), K0, 1),
    ])
    def test_round_trip(self, maker, tmp_path):
        prof = maker()
        path = tmp_path / "p.json"
        sp.save_profile(prof, path)
        back = sp.load_profile(path)
        k = np.linspace(0.0, 1.2 * K0, 77)
        np.testing.assert_array_equal(back(k), prof(k))
        assert back.kind == prof.kind and back.dimension == prof.dimension

    def test_mollified_round_trip(self, bump3, tmp_path):
        path = tmp_path / "m.json"
        sp.save_profile(bump3.profile, path)
        back = sp.load_profile(path)
        k = np.linspace(0.0, K0, 101)
        np.testing.assert_array_equal(back(k), bump3.phi_hat(k))
        assert json.loads(path.read_text())["parameters"]["n_bumps"] == 7

    def test_unknown_preset(self):
        with pytest.raises(InvalidParameter):
            sp.profile_from_dict({"preset": "gaussian", "cutoff": 1.0})


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(r=st.floats(0.0, 50.0))
    def test_bounded_by_value_at_origin(self, r, cos_r4, triangle1):
        # phi_hat >= 0 implies |phi(r)| <= phi(0)
        for pot in (cos_r4, triangle1):
            assert abs(pot(r)) <= pot.phi_at_zero * (1 + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(r=st.floats(0.0, 20.0))
    def test_even(self, r, cos_r4):
        assert cos_r4(-r) == cos_r4(r)

    @settings(max_examples=40, deadline=None)
    @given(coeffs=st.lists(st.floats(0.0, 3.0), min_size=1, max_size=4),
           k=st.floats(0.0, 2 * K0))
    def test_polynomial_evaluation(self, coeffs, k):
        prof = sp.polynomial_profile(coeffs, K0, 2)
        expected = np.polynomial.polynomial.polyval(k, coeffs) if k < K0 else 0.0
        assert prof(k) == pytest.approx(expected, rel=1e-12, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(0.5, 4.0))
    def test_dilation(self, scale):
        # phi_hat(k) -> phi_hat(k / s) on [0, s K0] maps phi(r) -> s phi(s r) in 1D
        base = sp.PairPotential(sp.triangle_profile(K0, 1))
        dil = sp.PairPotential(sp.polynomial_profile([K0, -1.0 / scale], scale * K0, 1))
        r = np.array([0.0, 0.3, 1.7, 5.0])
        np.testing.assert_allclose(dil(r), scale * base(scale * r), rtol=1e-10, atol=1e-12)
