import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pltm.paraxial import abcd_of, abcd_trace, effective_focal_length, refraction, translation
from pltm.tracer import RayState, trace_path


def test_thick_lens_focal_length(biconvex):
    lam = 587.6
    n = biconvex.material("bk7").ior(lam)
    s1, s2 = biconvex.optical_surfaces
    d = s2.z - s1.z
    power = (n - 1) * (1 / s1.radius - 1 / s2.radius + (n - 1) * d / (n * s1.radius * s2.radius))
    assert effective_focal_length(biconvex, lam) == pytest.approx(1 / power, rel=1e-12)


def test_determinant_is_index_ratio(bundled):
    for lam in (450.0, 550.0, 650.0):
        assert abcd_of(bundled, lam).det == pytest.approx(1.0, abs=1e-12)


def test_single_surface_matrix():
    m = refraction(50.0, 1.0, 1.5)
    assert np.linalg.det(m) == pytest.approx(1 / 1.5)
    assert m[1, 0] == pytest.approx((1.0 - 1.5) / (50.0 * 1.5))
    np.testing.assert_array_equal(translation(3.0) @ translation(2.0), translation(5.0))


def test_paraxial_limit_matches_oracle(bundled):
    """For rays near the axis the exact trace converges to the ABCD map."""
    lam = 587.6
    m = abcd_of(bundled, lam)
    h, u = 1e-4, 2e-5
    o = np.array([[h, 0.0, bundled.input_plane_z]])
    ray = RayState.make(o, [[u, 0.0, 1.0]], lam)
    res = trace_path(ray, 0, bundled)
    assert res.valid[0]
    h_out, u_out = abcd_trace(m, h, u)
    assert res.position[0, 0] == pytest.approx(h_out, rel=1e-5)
    assert res.direction[0, 0] / res.direction[0, 2] == pytest.approx(u_out, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(h=st.floats(-5, 5), u=st.floats(-0.1, 0.1))
def test_abcd_trace_is_linear(biconvex, h, u):
    m = abcd_of(biconvex, 550.0)
    a = np.array(abcd_trace(m, h, u))
    b = np.array(abcd_trace(m, 2 * h, 2 * u))
    np.testing.assert_allclose(b, 2 * a, atol=1e-12)


def test_dispersion_shortens_blue_focus(biconvex):
    assert effective_focal_length(biconvex, 450.0) < effective_focal_length(biconvex, 650.0)


def test_abcd_rejects_out_of_band(biconvex):
    with pytest.raises(ValueError):
        abcd_of(biconvex, 900.0)
