import numpy as np
import pytest

from roomsdf.camera import (Camera, load_cameras, look_at, make_ray, project,
                            rays_for_pixels, save_cameras, sphere_clip)


def simple_cam(rotation=None, translation=(0.0, 0.0, -2.0)):
    return Camera(fx=50.0, fy=50.0, cx=32.0, cy=32.0,
                  rotation=rotation if rotation is not None else np.eye(3),
                  translation=np.array(translation), width=64, height=64)


def test_principal_point_gives_optical_axis():
    ray = make_ray(simple_cam(), (32.0, 32.0))
    assert np.allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)


def test_directions_are_unit():
    cam = simple_cam(rotation=look_at((0.4, -0.3, -1.5), (0, 0, 0)))
    rng = np.random.default_rng(0)
    px = rng.uniform(0, 64, (1000, 2))
    _, d, _, _ = rays_for_pixels(cam, px)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)


def test_project_round_trip():
    cam = simple_cam(rotation=look_at((0.4, 0.2, -1.2), (0, 0, 0)))
    rng = np.random.default_rng(1)
    px = rng.uniform(1, 63, (200, 2))
    o, d, _, _ = rays_for_pixels(cam, px)
    points = o + 1.7 * d
    back = project(cam, points)
    assert np.max(np.abs(back - px)) < 1e-6


def test_pixel_out_of_bounds_raises():
    cam = simple_cam()
    with pytest.raises(ValueError, match="bounds"):
        make_ray(cam, (65.0, 10.0))
    with pytest.raises(ValueError, match="bounds"):
        make_ray(cam, (10.0, -0.5))


def test_camera_validation():
    bad_rot = np.eye(3)
    bad_rot[0, 0] = 1.1
    with pytest.raises(ValueError, match="orthonormal"):
        simple_cam(rotation=bad_rot)
    with pytest.raises(ValueError, match="positive"):
        Camera(fx=-1.0, fy=50.0, cx=32, cy=32, rotation=np.eye(3),
               translation=np.zeros(3), width=64, height=64)


def test_ray_interval_is_valid():
    # origin inside the scene sphere
    near, far = sphere_clip(np.array([[0.2, 0.1, -0.4]]),
                            np.array([[0.0, 0.0, 1.0]]))
    assert 0 < near[0] < far[0]
    # origin outside, looking in
    near, far = sphere_clip(np.array([[0.0, 0.0, -3.0]]),
                            np.array([[0.0, 0.0, 1.0]]))
    assert np.isclose(near[0], 1.5) and np.isclose(far[0], 4.5)


def test_look_at_is_orthonormal_and_faces_target():
    rng = np.random.default_rng(2)
    for _ in range(50):
        eye = rng.normal(0, 1, 3)
        target = rng.normal(0, 1, 3)
        if np.linalg.norm(target - eye) < 1e-3:
            continue
        rot = look_at(eye, target)
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0, atol=1e-12)
        fwd = rot[:, 2]
        expect = (target - eye) / np.linalg.norm(target - eye)
        assert np.allclose(fwd, expect, atol=1e-12)


def test_cameras_file_round_trip(tmp_path):
    cams = [simple_cam(rotation=look_at((0.5, 0.1, -1.0), (0, 0, 0)),
                       translation=(0.5, 0.1, -1.0)),
            simple_cam()]
    path = tmp_path / "cameras.txt"
    save_cameras(path, cams, norm_center=(0.1, 0.2, 0.3), norm_scale=0.5)
    loaded, center, scale = load_cameras(path)
    assert len(loaded) == 2
    assert np.allclose(center, [0.1, 0.2, 0.3])
    assert scale == 0.5
    for a, b in zip(cams, loaded):
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)
        assert (a.fx, a.fy, a.cx, a.cy) == (b.fx, b.fy, b.cx, b.cy)


def test_malformed_camera_line(tmp_path):
    path = tmp_path / "cameras.txt"
    path.write_text("# roomsdf cameras v1\n0 64 64 1 2 3\n")
    with pytest.raises(ValueError, match="19 fields"):
        load_cameras(path)
