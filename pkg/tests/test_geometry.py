"""Error-direction geometry and least-squares reconstruction."""

import numpy as np
import pytest

from pegservo.errors import (BehindCamera, DegenerateView, InsufficientViews,
                             InvalidConfig)
from pegservo.geometry import (CameraModel, aimed_camera, camera_from_dict,
                               camera_to_dict, denormalize_error,
                               error_direction, inplane_basis,
                               inplane_component, normalize_error, project,
                               reconstruct_error, scalar_error, vec3)

L = vec3(0.0, 0.0, -1.0)


def _cam(f=1000.0, r=64, z=500.0):
    # identity orientation: x=(1,0,0), y=(0,1,0), optical=(0,0,1)
    return CameraModel(position=vec3(0, 0, 0), orientation=np.eye(3),
                       f=f, r=r, z=z)


def test_error_direction_axis_case():
    # l x v = (0,0,-1) x (1,0,0) = (0*0-(-1)*0, (-1)*1-0*0, 0*0-0*1) = (0,-1,0)
    u = error_direction(L, vec3(1.0, 0.0, 0.0))
    assert np.array_equal(u, vec3(0.0, -1.0, 0.0))


def test_error_direction_unit_and_perpendicular():
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        l = rng.normal(size=3)
        l /= np.linalg.norm(l)
        v = rng.normal(size=3)
        if np.linalg.norm(np.cross(l, v)) < 1e-6:
            continue
        u = error_direction(l, v)
        assert abs(np.linalg.norm(u) - 1.0) <= 1e-9
        assert abs(np.dot(u, l)) <= 1e-9
        assert abs(np.dot(u, v)) <= 1e-9 * np.linalg.norm(v)


def test_error_direction_degenerate_view():
    with pytest.raises(DegenerateView):
        error_direction(L, vec3(0.0, 0.0, -7.0))


def test_scalar_error_hand_values():
    assert scalar_error(vec3(0.3, -0.2, 0.0), vec3(0.0, 1.0, 0.0)) == -0.2
    # (0.3, 0.4, 0) . (0.6, 0.8, 0) = 0.18 + 0.32 = 0.5
    assert scalar_error(vec3(0.3, 0.4, 0.0), vec3(0.6, 0.8, 0.0)) == pytest.approx(0.5, abs=1e-15)


def test_normalize_error_hand_value():
    cam = _cam()
    # y = q f / (r z) = 0.5 * 1000 / (64 * 500) = 0.015625, exact in binary
    assert normalize_error(0.5, cam) == 0.015625
    assert normalize_error(0.0, cam) == 0.0
    assert denormalize_error(0.015625, cam) == 0.5


def test_normalize_roundtrip_and_linearity():
    cam = _cam(f=731.0, r=48, z=412.5)
    for q in np.linspace(-10.0, 10.0, 101):
        back = denormalize_error(normalize_error(q, cam), cam)
        assert back == pytest.approx(q, rel=1e-12, abs=1e-15)
    assert normalize_error(2.0, cam) == pytest.approx(2 * normalize_error(1.0, cam), rel=1e-12)


def test_reconstruct_orthonormal_rows():
    rec = reconstruct_error([vec3(1, 0, 0), vec3(0, 1, 0)], [0.3, -0.2])
    assert not rec.ill_conditioned
    assert np.allclose(rec.error, [0.3, -0.2, 0.0], atol=1e-12)


def test_reconstruct_two_views_60_degrees():
    # u2.e = 0.5*ex + 0.86603*ey = 0.2 with ex = 0.1 -> ey = 0.15/0.86603
    rec = reconstruct_error([vec3(1, 0, 0), vec3(0.5, 0.86603, 0)], [0.1, 0.2])
    assert not rec.ill_conditioned
    assert np.allclose(rec.error, [0.1, 0.17320, 0.0], atol=1e-4)


def test_reconstruct_parallel_rows_flagged_min_norm():
    rec = reconstruct_error([vec3(1, 0, 0), vec3(1, 0, 0)], [0.2, 0.4])
    assert rec.ill_conditioned
    # min-norm least squares = mean along the shared direction
    assert np.allclose(rec.error, [0.3, 0.0, 0.0], atol=1e-12)


def test_reconstruct_requires_two_views():
    with pytest.raises(InsufficientViews):
        reconstruct_error([vec3(1, 0, 0)], [0.1])
    with pytest.raises(InsufficientViews):
        reconstruct_error([vec3(1, 0, 0), vec3(0, 1, 0)], [0.1])


def test_reconstruct_roundtrip_random_scenes():
    # planted in-plane error, 2-4 cameras; labels are exact
    rng = np.random.default_rng(11)
    B = inplane_basis(L)
    for _ in range(200):
        e = B @ rng.uniform(-2.0, 2.0, size=2)
        n_cams = int(rng.integers(2, 5))
        dirs, qs = [], []
        for _ in range(n_cams):
            pos = rng.normal(size=3) * 300.0
            pos[2] = abs(pos[2]) + 100.0
            view = -pos
            if np.linalg.norm(np.cross(L, view)) < 1e-3 * np.linalg.norm(view):
                view = view + vec3(50.0, 0.0, 0.0)
            u = error_direction(L, view)
            dirs.append(u)
            qs.append(scalar_error(e, u))
        rec = reconstruct_error(dirs, qs)
        assert np.linalg.norm(rec.error - e) <= 1e-9
        assert abs(np.dot(rec.error, L)) <= 1e-9


def test_project_principal_point_and_hand_value():
    cam = _cam()
    assert project(cam, vec3(0, 0, 123.4)) == (32.0, 32.0)
    # px = 32 + 1000*0.05/500 = 32.1
    px, py = project(cam, vec3(0.05, 0.0, 500.0))
    assert px == pytest.approx(32.1, abs=1e-12)
    assert py == pytest.approx(32.0, abs=1e-12)


def test_project_behind_camera():
    cam = _cam()
    with pytest.raises(BehindCamera):
        project(cam, vec3(0.0, 0.0, 0.0))
    with pytest.raises(BehindCamera):
        project(cam, vec3(0.0, 0.0, -5.0))


def test_camera_model_validation():
    with pytest.raises(InvalidConfig):
        CameraModel(position=vec3(0, 0, 0), orientation=np.ones((3, 3)),
                    f=1000.0, r=64, z=500.0)
    with pytest.raises(InvalidConfig):
        CameraModel(position=vec3(0, 0, 0), orientation=np.eye(3),
                    f=-1.0, r=64, z=500.0)


def test_aimed_camera_axes():
    pos = vec3(400.0, 0.0, 300.0)
    cam = aimed_camera(pos, vec3(0, 0, 0), L, f=1000.0, r=64)
    view = -pos
    assert np.allclose(cam.optical_axis, view / np.linalg.norm(view), atol=1e-12)
    assert np.allclose(cam.x_axis, error_direction(L, view), atol=1e-12)
    assert cam.z == pytest.approx(500.0, rel=1e-12)
    R = cam.orientation
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, rel=1e-9)


def test_inplane_basis_and_component():
    B = inplane_basis(L)
    assert B.shape == (3, 2)
    assert np.allclose(B.T @ L, 0.0, atol=1e-12)
    assert np.allclose(B.T @ B, np.eye(2), atol=1e-12)
    v = vec3(0.3, -0.7, 2.0)
    ip = inplane_component(v, L)
    assert abs(np.dot(ip, L)) <= 1e-12
    assert np.allclose(ip, vec3(0.3, -0.7, 0.0), atol=1e-12)


def test_camera_dict_roundtrip():
    cam = aimed_camera(vec3(100.0, -50.0, 400.0), vec3(0, 0, 0), L, 800.0, 48)
    back = camera_from_dict(camera_to_dict(cam))
    assert np.array_equal(back.position, cam.position)
    assert np.array_equal(back.orientation, cam.orientation)
    assert (back.f, back.r, back.z) == (cam.f, cam.r, cam.z)
