"""Dipole field, rotation and coupling tests.

The independent oracle for the closed-form dipole field is numerical
integration of the exact infinitesimal-dipole fields over the sinusoidal
current distribution I(s) = sin(k(l/2 - |s|)); the frozen values below were
produced by `hertzian_integral` (kept here so they can be regenerated).
"""

import numpy as np
import pytest
from scipy.integrate import quad

from pimsim.constants import C0, ETA0, TX_CENTER_HZ
from pimsim.emcore import (
    FRAME_CART,
    ArrayLayout,
    AxisSingularityError,
    DipoleElement,
    FieldVector,
    array_field,
    coupling_vector,
    cyl_to_cart,
    dipole_field_cyl,
    element_field,
    feed_current,
    paper_16t16r_layout,
    rotation_for_axis,
    small_2t2r_layout,
    validate_rotation,
)

F0 = TX_CENTER_HZ
LAM = C0 / F0
L_HALF = LAM / 2


def hertzian_integral(rho, z, which, l=L_HALF, f=F0):
    """Brute-force oracle: integrate exact Hertzian-dipole fields over I(s)."""
    k = 2 * np.pi * f / C0

    def comp(s):
        R = np.sqrt(rho ** 2 + (z - s) ** 2)
        ct = (z - s) / R
        st = rho / R
        cur = np.sin(k * (l / 2 - abs(s)))
        e_r = ETA0 * cur * ct / (2 * np.pi * R ** 2) * (1 + 1 / (1j * k * R)) * np.exp(-1j * k * R)
        e_t = (1j * ETA0 * k * cur * st / (4 * np.pi * R)
               * (1 + 1 / (1j * k * R) - 1 / (k * R) ** 2) * np.exp(-1j * k * R))
        return e_r * st + e_t * ct if which == "rho" else e_r * ct - e_t * st

    re = quad(lambda s: comp(s).real, -l / 2, l / 2, limit=800)[0]
    im = quad(lambda s: comp(s).imag, -l / 2, l / 2, limit=800)[0]
    return re + 1j * im


# (rho/lam, z/lam) -> l * oracle integral, frozen from hertzian_integral
FROZEN_ORACLE = {
    (2.0, 0.7): (3.642897340612769 + 2.282735390335712j,
                 -8.858485893263195 - 8.465827182231724j),
    (0.8, -1.3): (3.155286208091594 + 6.947683890707901j,
                  -1.6855161454374852 + 5.1463388601973605j),
    (0.3, 0.2): (-18.293084268894674 - 37.47235477511379j,
                 -39.42854394433079 + 43.25214590102018j),
}


class TestDipoleField:
    def test_e_phi_is_exactly_zero(self):
        fv = dipole_field_cyl(L_HALF, 1.0, F0, (0.7, 0.3, 1.2))
        assert fv.components[1] == 0.0

    def test_mirror_symmetry(self):
        rho, z = 0.9, 0.6
        up = dipole_field_cyl(L_HALF, 1.0, F0, (rho, 0, z)).components
        dn = dipole_field_cyl(L_HALF, 1.0, F0, (rho, 0, -z)).components
        assert up[0] == pytest.approx(-dn[0], rel=1e-12)
        assert up[2] == pytest.approx(dn[2], rel=1e-12)

    def test_matches_frozen_quadrature_oracle(self):
        for (rho_f, z_f), (e_rho, e_z) in FROZEN_ORACLE.items():
            fv = dipole_field_cyl(L_HALF, 1.0, F0, (rho_f * LAM, 0.0, z_f * LAM))
            assert fv.components[0] == pytest.approx(e_rho, rel=1e-9)
            assert fv.components[2] == pytest.approx(e_z, rel=1e-9)

    def test_live_quadrature_oracle(self):
        # one live evaluation keeps the frozen table honest
        rho, z = 1.4 * LAM, -0.4 * LAM
        fv = dipole_field_cyl(L_HALF, 1.0, F0, (rho, 0.0, z))
        assert fv.components[0] == pytest.approx(L_HALF * hertzian_integral(rho, z, "rho"), rel=1e-8)
        assert fv.components[2] == pytest.approx(L_HALF * hertzian_integral(rho, z, "z"), rel=1e-8)

    def test_half_wave_far_field_pattern(self):
        r = 100 * LAM
        thetas = np.deg2rad(np.arange(10, 171, 2))
        mags = []
        for th in thetas:
            c = dipole_field_cyl(L_HALF, 1.0, F0, (r * np.sin(th), 0, r * np.cos(th))).components
            mags.append(np.hypot(abs(c[0]), abs(c[2])))
        mags = np.asarray(mags)
        model = np.cos(np.pi / 2 * np.cos(thetas)) / np.sin(thetas)
        scale = np.dot(mags, model) / np.dot(model, model)
        assert np.max(np.abs(mags - scale * model) / (scale * model)) < 0.01

    def test_axis_singularity(self):
        with pytest.raises(AxisSingularityError):
            dipole_field_cyl(L_HALF, 1.0, F0, (0.0, 0.0, 1.0))

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            dipole_field_cyl(-0.1, 1.0, F0, (1, 0, 0))
        with pytest.raises(ValueError):
            dipole_field_cyl(L_HALF, 1.0, 0.0, (1, 0, 0))


class TestRotationsAndElements:
    def test_rotation_matrices_are_proper(self):
        for axis in "xyz":
            r = rotation_for_axis(axis)
            assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_validate_rotation_rejects_improper(self):
        with pytest.raises(ValueError):
            validate_rotation(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(ValueError):
            validate_rotation(np.eye(3) * 1.1)

    def test_identity_element_matches_dipole_field(self):
        obs = np.array([0.4, 0.2, 0.9])
        elem = DipoleElement(np.zeros(3), np.eye(3), L_HALF, 0)
        got = element_field(elem, 1.0, F0, obs).components
        want = cyl_to_cart(dipole_field_cyl(L_HALF, 1.0, F0, obs), obs)
        assert np.allclose(got, want, rtol=1e-12)

    def test_axis_follows_rotation(self):
        # dipole along global x; points on the global x-axis are on its axis
        elem = DipoleElement(np.zeros(3), rotation_for_axis("x"), L_HALF, 0)
        with pytest.raises(AxisSingularityError):
            element_field(elem, 1.0, F0, (1.0, 0.0, 0.0))
        # ...and the formerly singular z-axis is fine now
        element_field(elem, 1.0, F0, (0.0, 0.0, 1.0))

    def test_rotate_the_world_equivalence(self):
        rng = np.random.default_rng(7)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        ang = 1.1
        kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        rot = np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * kx @ kx
        pos = np.array([0.2, -0.1, 0.05])
        obs = np.array([1.3, 0.7, -0.4])
        rotated = DipoleElement(pos, rot, L_HALF, 0)
        straight = DipoleElement(np.zeros(3), np.eye(3), L_HALF, 0)
        got = element_field(rotated, 1.0, F0, obs).components
        want = rot @ element_field(straight, 1.0, F0, rot.T @ (obs - pos)).components
        assert np.allclose(got, want, rtol=1e-10, atol=1e-14)

    def test_field_vector_frame_discipline(self):
        cart = FieldVector(np.ones(3), FRAME_CART)
        cyl = dipole_field_cyl(L_HALF, 1.0, F0, (1, 0, 0))
        with pytest.raises(ValueError):
            _ = cart + cyl
        with pytest.raises(ValueError):
            _ = cyl + cyl


class TestArray:
    def test_single_element_equals_element_field(self):
        elem = DipoleElement(np.zeros(3), np.eye(3), L_HALF, 0)
        layout = ArrayLayout((elem,), 1)
        obs = (0.7, 0.1, 1.9)
        got = array_field(layout, [1.0 + 0.5j], F0, obs).components
        want = element_field(elem, 1.0 + 0.5j, F0, obs).components
        assert np.allclose(got, want, rtol=1e-15)

    def test_linearity_in_chain_currents(self):
        layout = small_2t2r_layout()
        obs = (0.3, -0.2, 2.0)
        u = np.array([1.0 + 0.2j, -0.4 + 1.1j])
        v = np.array([0.3 - 0.9j, 0.8 + 0.1j])
        a, b = 1.7 - 0.3j, -0.6 + 1.2j
        lhs = array_field(layout, a * u + b * v, F0, obs).components
        rhs = (a * array_field(layout, u, F0, obs).components
               + b * array_field(layout, v, F0, obs).components)
        assert np.allclose(lhs, rhs, rtol=1e-12)

    def test_symmetric_pair_field(self):
        # mirror pair on the x-axis seen from broadside: transverse parts
        # cancel, axial parts add coherently
        d = 0.25 * LAM
        e1 = DipoleElement(np.array([d, 0, 0]), np.eye(3), L_HALF, 0,
                           amplitude_scale=np.sqrt(0.5))
        e2 = DipoleElement(np.array([-d, 0, 0]), np.eye(3), L_HALF, 0,
                           amplitude_scale=np.sqrt(0.5))
        pair = ArrayLayout((e1, e2), 1)
        obs = (0.0, 0.0, 3.0)
        got = array_field(pair, [1.0], F0, obs).components
        single = element_field(e1, 1.0, F0, obs).components
        assert abs(got[0]) < 1e-15
        assert got[2] == pytest.approx(2 * single[2], rel=1e-12)

    def test_singularity_names_element(self):
        layout = small_2t2r_layout()
        # on the axis of the horizontal dipole at row 0
        bad = layout.elements[1].position + np.array([0.05, 0.0, 0.0])
        with pytest.raises(AxisSingularityError, match="element"):
            array_field(layout, [1.0, 1.0], F0, bad)

    def test_layout_invariants(self):
        e = DipoleElement(np.zeros(3), np.eye(3), L_HALF, 0, amplitude_scale=0.7)
        with pytest.raises(ValueError, match="power split"):
            ArrayLayout((e,), 1)
        with pytest.raises(ValueError, match="at least one element"):
            ArrayLayout((DipoleElement(np.zeros(3), np.eye(3), L_HALF, 0),), 2)


class TestFeedCurrent:
    def test_unity(self):
        assert feed_current(50.0, 50.0) == 1.0

    def test_zero_power(self):
        assert feed_current(0.0, 50.0) == 0.0

    def test_37_dbm_chain(self):
        p = 10 ** (37 / 10) * 1e-3          # dB-to-watts oracle
        assert p == pytest.approx(5.0119, rel=1e-4)
        assert feed_current(p, 50.0) == pytest.approx(0.31661, rel=1e-4)

    def test_bad_impedance(self):
        with pytest.raises(ValueError):
            feed_current(1.0, 0.0)


class TestCoupling:
    def test_orthogonal_orientation_zeroes_chains(self):
        # y-dipoles on the z-axis produce no x-field component on boresight
        layout = small_2t2r_layout()
        h = coupling_vector(layout, (0.0, 0.0, 2.5), (1.0, 0.0, 0.0), F0)
        assert abs(h[0]) < 1e-9 * abs(h[1])

    def test_far_field_inverse_r_decay(self):
        layout = paper_16t16r_layout()
        p = np.ones(3) / np.sqrt(3)
        r1, r2 = 50 * LAM, 100 * LAM
        h1 = coupling_vector(layout, (0, 0, r1), p, F0)
        h2 = coupling_vector(layout, (0, 0, r2), p, F0)
        drift = np.abs(np.abs(h1) * r1 - np.abs(h2) * r2) / (np.abs(h2) * r2)
        assert drift.max() < 0.02

    def test_non_unit_orientation_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            coupling_vector(small_2t2r_layout(), (0, 0, 1.0), (1.0, 1.0, 0.0), F0)

    def test_scales_with_feed_current(self):
        quiet = small_2t2r_layout(chain_power_w=1.0)
        loud = small_2t2r_layout(chain_power_w=4.0)
        p = np.array([0, 1, 0.0])
        h1 = coupling_vector(quiet, (0, 0, 2.0), p, F0)
        h2 = coupling_vector(loud, (0, 0, 2.0), p, F0)
        assert np.allclose(h2, 2 * h1, rtol=1e-12)

    def test_paper_layout_shape(self):
        layout = paper_16t16r_layout()
        assert layout.n_chains == 16
        assert len(layout.elements) == 64
        # even chains vertical (y), odd horizontal (x)
        for e in layout.elements:
            want = np.array([0, 1, 0]) if e.chain_id % 2 == 0 else np.array([1, 0, 0])
            assert np.allclose(e.axis, want)
        # half-wavelength grid
        xs = sorted({round(e.position[0], 9) for e in layout.elements})
        ys = sorted({round(e.position[1], 9) for e in layout.elements})
        assert len(xs) == 4 and len(ys) == 8
        assert np.allclose(np.diff(xs), LAM / 2)
