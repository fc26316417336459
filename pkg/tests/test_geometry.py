import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geoalign.errors import GeometryError
from geoalign.geometry import (CameraModel, DepthMap, PointMap, depth_to_points, inverse_depth_weights,
                               pixel_grid, points_to_depth)


def test_pixel_centers_are_half_offset():
    u, v = pixel_grid(2, 3)
    assert u[0].tolist() == [0.5, 1.5, 2.5]
    assert v[:, 0].tolist() == [0.5, 1.5]


def test_principal_ray_single_pixel():
    # the only pixel center sits at (0.5, 0.5), so put the principal point there
    cam = CameraModel(1.0, 1.0, 0.5, 0.5)
    pm = depth_to_points(DepthMap(np.array([[2.0]])), cam)
    assert pm.points[0, 0].tolist() == [0.0, 0.0, 2.0]


def test_unit_slope_ray():
    # pixel center (2.5, 0.5) lies one focal length right of (0.5, 0.5)
    cam = CameraModel(2.0, 2.0, 0.5, 0.5)
    pm = depth_to_points(DepthMap(np.ones((1, 3))), cam)
    np.testing.assert_array_equal(pm.points[0, 2], [1.0, 0.0, 1.0])


def test_slanted_plane_round_trip():
    yy, xx = np.mgrid[0:8, 0:8]
    z = 2.0 + 0.1 * xx + 0.05 * yy
    cam = CameraModel.centered(7.0, 8, 8)
    d = points_to_depth(depth_to_points(DepthMap(z), cam))
    np.testing.assert_allclose(d.values, z, rtol=0, atol=1e-12)


def test_points_to_depth_takes_z_and_validity():
    P = np.array([[[1.0, 0.0, 2.0], [0.0, 0.0, 3.0]]])
    d = points_to_depth(PointMap(P, np.array([[True, False]])))
    assert d.values[0, 0] == 2.0
    assert d.mask.tolist() == [[True, False]]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0.5, 500.0), st.integers(0, 2**31 - 1))
def test_round_trip_is_bit_exact(h, w, f, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.1, 100.0, (h, w))
    mask = rng.random((h, w)) < 0.8
    d = DepthMap(z, mask)
    back = points_to_depth(depth_to_points(d, CameraModel.centered(f, w, h)))
    assert np.array_equal(back.mask, mask)
    assert np.array_equal(back.values[mask], z[mask])


def test_nan_and_nonpositive_depth_become_invalid():
    z = np.array([[1.0, np.nan, -1.0, 0.0]])
    d = DepthMap(z)
    assert d.mask.tolist() == [[True, False, True, True]]
    pm = depth_to_points(d, CameraModel.centered(1.0, 4, 1))
    assert pm.mask.tolist() == [[True, False, False, False]]


def test_mask_shape_mismatch_raises():
    with pytest.raises(GeometryError):
        DepthMap(np.ones((2, 2)), np.ones((2, 3), bool))
    with pytest.raises(GeometryError):
        PointMap(np.ones((2, 2, 3)), np.ones((3, 2), bool))


def test_maps_are_immutable():
    d = DepthMap(np.ones((2, 2)))
    with pytest.raises(ValueError):
        d.values[0, 0] = 5.0


def test_bad_camera_and_frame():
    with pytest.raises(GeometryError):
        CameraModel(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(GeometryError):
        PointMap(np.ones((1, 1, 3)), frame="projective")


def test_camera_dict_round_trip():
    cam = CameraModel(3.0, 4.0, 1.5, 2.5, -0.25)
    assert CameraModel.from_dict(cam.to_dict()) == cam


def test_inverse_depth_weights():
    assert inverse_depth_weights(np.array([2.0]))[0] == 0.5
    assert inverse_depth_weights(np.array([1.0, 2.0, 4.0])).tolist() == [1.0, 0.5, 0.25]
    w = inverse_depth_weights(DepthMap(np.array([[2.0, 3.0]]), np.array([[True, False]])))
    assert w.tolist() == [[0.5, 0.0]]


def test_inverse_depth_weights_reject_nonpositive():
    with pytest.raises(GeometryError):
        inverse_depth_weights(np.array([1.0, 0.0]))
    # masked-out bad depth is fine
    w = inverse_depth_weights(np.array([1.0, -1.0]), np.array([True, False]))
    assert w.tolist() == [1.0, 0.0]


def test_mask_composition():
    z = np.ones((2, 2))
    a = np.array([[True, True], [False, True]])
    b = np.array([[True, False], [True, True]])
    pm = depth_to_points(DepthMap(z, a), CameraModel.centered(1.0, 2, 2)).with_mask(b)
    assert np.array_equal(pm.mask, a & b)
