import numpy as np
import pytest

from semsplat.camera import Camera, Intrinsics
from semsplat.errors import DataError
from semsplat.pointmap import PointMap
from semsplat.synthetic import look_at_camera


def make_camera(**overrides):
    base = dict(fx=50.0, fy=55.0, cx=16.0, cy=12.0, width=32, height=24,
                R=np.eye(3), t=np.array([0.1, -0.2, 0.3]))
    base.update(overrides)
    return Camera(**base)


def test_camera_accepts_valid_rotation():
    cam = look_at_camera([1.0, 2.0, -3.0], [0.0, 0.0, 4.0], 60.0, 32, 24)
    np.testing.assert_allclose(cam.R @ cam.R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(cam.R) == pytest.approx(1.0, abs=1e-12)


def test_camera_rejects_bad_rotation():
    with pytest.raises(DataError):
        make_camera(R=np.eye(3) * 1.01)
    flip = np.diag([1.0, 1.0, -1.0])  # det -1
    with pytest.raises(DataError):
        make_camera(R=flip)
    with pytest.raises(DataError):
        make_camera(R=np.zeros((3, 3)))


def test_camera_rejects_bad_scalars():
    with pytest.raises(DataError):
        make_camera(fx=-1.0)
    with pytest.raises(DataError):
        make_camera(width=0)
    with pytest.raises(DataError):
        make_camera(t=np.array([np.nan, 0.0, 0.0]))


def test_world_cam_round_trip(rng):
    cam = look_at_camera([0.5, -0.4, -1.0], [0.0, 0.0, 3.0], 48.0, 20, 20)
    pts = rng.normal(size=(40, 3))
    back = cam.cam_to_world(cam.world_to_cam(pts))
    np.testing.assert_allclose(back, pts, atol=1e-12)
    # camera center maps to the origin of the camera frame
    np.testing.assert_allclose(cam.world_to_cam(cam.center), np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(cam.center, -cam.R.T @ cam.t, atol=0.0)


def test_camera_dict_round_trip():
    cam = look_at_camera([1.0, 0.0, -2.0], [0.0, 0.5, 3.0], 75.0, 64, 48)
    d = cam.to_dict()
    assert set(d) == {"fx", "fy", "cx", "cy", "width", "height", "R", "t"}
    assert len(d["R"]) == 9 and len(d["t"]) == 3
    # row-major flattening
    np.testing.assert_array_equal(np.array(d["R"]).reshape(3, 3), cam.R)
    back = Camera.from_dict(d)
    assert back.fx == cam.fx and back.width == cam.width
    np.testing.assert_array_equal(back.R, cam.R)
    np.testing.assert_array_equal(back.t, cam.t)


def test_camera_from_dict_validation():
    d = make_camera().to_dict()
    del d["fx"]
    with pytest.raises(DataError):
        Camera.from_dict(d)
    d = make_camera().to_dict()
    d["R"] = d["R"][:8]
    with pytest.raises(DataError):
        Camera.from_dict(d)


def test_intrinsics_validation():
    intr = Intrinsics(fx=10.0, fy=12.0, cx=5.0, cy=4.0)
    assert intr.fx == 10.0
    with pytest.raises(DataError):
        Intrinsics(fx=0.0, fy=1.0, cx=0.0, cy=0.0)


def test_pointmap_validation(rng):
    pts = rng.normal(size=(4, 6, 3))
    pm = PointMap.full(pts)
    assert pm.shape == (4, 6)
    assert pm.valid_count == 24
    np.testing.assert_array_equal(pm.confidence, np.ones((4, 6)))
    with pytest.raises(DataError):
        PointMap(points=pts, confidence=np.full((4, 6), 0.5),
                 mask=np.ones((4, 6), dtype=bool))
    with pytest.raises(DataError):
        PointMap(points=pts, confidence=np.ones((4, 5)),
                 mask=np.ones((4, 6), dtype=bool))
    with pytest.raises(DataError):
        PointMap.full(rng.normal(size=(4, 6, 2)))
    mask = np.zeros((4, 6), dtype=bool)
    mask[1, 2] = True
    pm = PointMap(points=pts, confidence=np.ones((4, 6)), mask=mask)
    assert pm.valid_count == 1
