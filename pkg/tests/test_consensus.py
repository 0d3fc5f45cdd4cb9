import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sf2se3.consensus import (
    NoiseParams,
    RigidObject,
    gauss_inlier_prob,
    joint_inlier_prob,
    joint_likelihood,
    joint_log_likelihood,
    motion_inlier_prob,
    motion_likelihood,
    motion_log_likelihood,
    point_to_point_spatial_prob,
    spatial_inlier_prob,
    spatial_likelihood,
    spatial_log_likelihood,
)
from sf2se3.errors import EmptySpatialModelError
from sf2se3.geometry import SE3, CameraIntrinsics, _project, backproject, random_rotation
from sf2se3.preprocess import PointSet

# 2 (1 - Phi(k)) from mpmath at 30 digits
TAIL_1 = 0.317310507862914102829534908736
TAIL_3 = 0.00269979606326018905330362953519

K = CameraIntrinsics(100.0, 100.0, 32.0, 32.0, 0.5, 64, 64)
P = NoiseParams()


def make_points(xy, z, motion, r_t1=None, r_t2=None, extra=None):
    """Points generated exactly by ``motion``; ``extra`` adds (du, dv, dd) to the observations."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    z = np.broadcast_to(np.asarray(z, dtype=float), len(xy)).copy()
    n = len(xy)
    p1 = backproject(xy[:, 0], xy[:, 1], z, K)
    p2 = motion.apply(p1)
    u2, v2, d2 = _project(p2, K)
    extra = np.zeros((n, 3)) if extra is None else np.asarray(extra, dtype=float).reshape(n, 3)
    u = u2 - xy[:, 0] + extra[:, 0]
    v = v2 - xy[:, 1] + extra[:, 1]
    d = d2 + extra[:, 2]
    r_t1 = np.ones(n, bool) if r_t1 is None else np.asarray(r_t1, bool)
    r_t2 = np.ones(n, bool) if r_t2 is None else np.asarray(r_t2, bool)
    p1 = np.where(r_t1[:, None], p1, np.nan)
    p2 = np.where(r_t2[:, None], p2, np.nan)
    zz = np.where(r_t1, z, np.nan)
    d = np.where(r_t2, d, np.nan)
    return PointSet(xy[:, 0], xy[:, 1], zz, p1, p2, u, v, d, r_t1, r_t2, 1, (64, 64), K)


MOTION = SE3.from_axis_angle((0.02, -0.01, 0.03), (0.05, 0.02, -0.04))


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(sigma_u=0.0)
    assert NoiseParams.for_stride(3).sigma_geo_2d == 6.0
    assert NoiseParams.for_stride(3, sigma_geo_2d=1.0).sigma_geo_2d == 1.0


def test_gauss_values():
    assert gauss_inlier_prob(1.5, 1.5, 2.0) == 1.0
    assert abs(gauss_inlier_prob(3.0, 1.0, 4.0) - TAIL_1) <= 1e-6
    assert abs(gauss_inlier_prob(-5.0, 1.0, 4.0) - TAIL_3) <= 1e-6
    assert abs(gauss_inlier_prob(1.0, 0.0, 1.0) - TAIL_1) <= 1e-12
    with pytest.raises(ValueError):
        gauss_inlier_prob(0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 10), st.floats(0.0, 5.0))
def test_gauss_symmetric_and_decreasing(a, mu, sigma2, step):
    p = gauss_inlier_prob(a, mu, sigma2)
    assert 0.0 <= p <= 1.0
    assert gauss_inlier_prob(2 * mu - a, mu, sigma2) == pytest.approx(p, rel=1e-9, abs=1e-300)
    far = mu + abs(a - mu) + step + 1e-3
    assert gauss_inlier_prob(far, mu, sigma2) <= p


def test_motion_exact_point():
    pts = make_points([[10, 20], [40, 30]], 2.0, MOTION)
    np.testing.assert_allclose(motion_inlier_prob(pts, RigidObject(MOTION), P), 1.0, atol=1e-12)


def test_motion_single_factor_reduction():
    pts = make_points([[10, 20]], 2.0, MOTION, extra=[[P.sigma_u, 0.0, 0.0]])
    assert abs(motion_inlier_prob(pts, RigidObject(MOTION), P)[0] - TAIL_1) <= 1e-6
    pts = make_points([[10, 20]], 2.0, MOTION, extra=[[0.0, 0.0, 3 * P.sigma_d]])
    assert abs(motion_inlier_prob(pts, RigidObject(MOTION), P)[0] - TAIL_3) <= 1e-6


def test_motion_flag_cases():
    extra = [[0.5, -0.3, 2.0]] * 3
    pts = make_points([[10, 20]] * 3, 2.0, MOTION, r_t1=[1, 1, 0], r_t2=[1, 0, 0], extra=extra)
    p = motion_inlier_prob(pts, RigidObject(MOTION), P)
    pu = gauss_inlier_prob(0.5, 0, 1) * gauss_inlier_prob(0.3, 0, 1)
    assert p[0] == pytest.approx(pu * gauss_inlier_prob(2.0, 0, 1), rel=1e-12)
    assert p[1] == pytest.approx(pu, rel=1e-12)
    assert p[2] == 1.0
    assert p[1] >= p[0]


def test_motion_behind_camera():
    pts = make_points([[32, 32]], 1.0, SE3.identity())
    away = SE3(None, (0.0, 0.0, -2.0))
    assert motion_inlier_prob(pts, RigidObject(away), P)[0] == 0.0
    assert motion_likelihood(pts, RigidObject(away), P)[0] == 0.0


def test_motion_pre_transform_invariance():
    rng = np.random.default_rng(2)
    pts = make_points(rng.uniform(5, 60, (20, 2)), rng.uniform(1, 3, 20), MOTION,
                      extra=rng.normal(0, 0.5, (20, 3)))
    base = motion_inlier_prob(pts, RigidObject(MOTION), P)
    # express the reference points in another frame G and fold G into the motion
    G = SE3(random_rotation(rng), rng.normal(size=3))
    moved = PointSet(pts.x, pts.y, pts.z, G.inverse().apply(pts.p_t1), pts.p_t2, pts.u, pts.v, pts.d,
                     pts.r_t1, pts.r_t2, 1, (64, 64), K)
    np.testing.assert_allclose(motion_inlier_prob(moved, RigidObject(MOTION @ G), P), base, atol=1e-9)


def test_spatial_cases():
    cloud = np.array([[10.0, 10.0, 2.0], [30.0, 30.0, 1.0]])
    obj = RigidObject(MOTION, cloud)
    pts = make_points([[10, 10], [10 + P.sigma_geo_2d, 10], [30, 30]], [2.0, 2.0, 1.3], MOTION,
                      r_t1=[1, 1, 0], r_t2=[1, 1, 0])
    p = spatial_inlier_prob(pts, obj, P)
    assert p[0] == 1.0
    assert abs(p[1] - TAIL_1) <= 1e-6
    assert p[2] == 1.0   # depth ignored without r_t1


def test_spatial_relative_depth():
    obj = RigidObject(MOTION, [[10.0, 10.0, 2.0]])
    z = 2.0 * (1 + P.sigma_geo_depth_rel / 2) / (1 - P.sigma_geo_depth_rel / 2)
    pts = make_points([[10, 10]], z, MOTION)
    # (z - 2) / ((z + 2) / 2) equals sigma_geo_depth_rel by construction
    assert abs(spatial_inlier_prob(pts, obj, P)[0] - TAIL_1) <= 1e-9


def test_spatial_nn_ignores_depth():
    obj = RigidObject(MOTION, [[10.0, 10.0, 5.0], [14.0, 10.0, 2.0]])
    pts = make_points([[11, 10]], 2.0, MOTION)
    dz = (2.0 - 5.0) / 3.5
    expected = gauss_inlier_prob(1, 0, P.sigma_geo_2d**2) * gauss_inlier_prob(0, 0, 1) \
        * gauss_inlier_prob(dz, 0, P.sigma_geo_depth_rel**2)
    assert spatial_inlier_prob(pts, obj, P)[0] == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_empty_cloud():
    pts = make_points([[10, 10]], 2.0, MOTION)
    with pytest.raises(EmptySpatialModelError):
        spatial_inlier_prob(pts, RigidObject(MOTION), P)
    with pytest.raises(EmptySpatialModelError):
        joint_inlier_prob(pts, RigidObject(MOTION), P)


def test_cloud_is_read_only():
    obj = RigidObject(MOTION, [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        obj.cloud[0, 0] = 5.0


def test_joint_is_product():
    rng = np.random.default_rng(4)
    xy = rng.uniform(0, 63, (30, 2))
    pts = make_points(xy, rng.uniform(1, 3, 30), MOTION, extra=rng.normal(0, 1, (30, 3)))
    obj = RigidObject(MOTION, np.c_[xy + rng.normal(0, 3, (30, 2)), rng.uniform(1, 3, 30)])
    pj = joint_inlier_prob(pts, obj, P)
    np.testing.assert_allclose(pj, spatial_inlier_prob(pts, obj, P) * motion_inlier_prob(pts, obj, P),
                               rtol=1e-15, atol=0)
    assert np.all((pj >= 0) & (pj <= 1))


def test_likelihood_peak_densities():
    obj = RigidObject(MOTION, [[10.0, 20.0, 2.0]])
    pts = make_points([[10, 20]], 2.0, MOTION)
    peak = lambda s: 1.0 / (s * math.sqrt(2 * math.pi))
    assert motion_likelihood(pts, obj, P)[0] == pytest.approx(peak(1) ** 3, rel=1e-12)
    expected = peak(P.sigma_geo_2d) ** 2 * peak(P.sigma_geo_depth_rel)
    assert spatial_likelihood(pts, obj, P)[0] == pytest.approx(expected, rel=1e-12)
    assert joint_likelihood(pts, obj, P)[0] == pytest.approx(expected * peak(1) ** 3, rel=1e-12)
    no_depth = make_points([[10, 20]], 2.0, MOTION, r_t1=[0], r_t2=[0])
    assert motion_likelihood(no_depth, obj, P)[0] == 1.0


def test_log_likelihood_hand_sum():
    rng = np.random.default_rng(8)
    res = rng.normal(0, 1.5, (25, 3))
    xy = rng.uniform(0, 63, (25, 2))
    params = NoiseParams(0.7, 1.3, 0.9, 5.0, 0.05)
    pts = make_points(xy, rng.uniform(1, 3, 25), MOTION, extra=res)
    obj = RigidObject(MOTION)
    const = -math.log(0.7 * 1.3 * 0.9) - 1.5 * math.log(2 * math.pi)
    hand = -0.5 * ((res[:, 0] / 0.7) ** 2 + (res[:, 1] / 1.3) ** 2 + (res[:, 2] / 0.9) ** 2) + const
    np.testing.assert_allclose(motion_log_likelihood(pts, obj, params), hand, atol=1e-9)


def test_planted_model_dominates():
    rng = np.random.default_rng(9)
    xy = rng.uniform(5, 60, (50, 2))
    pts = make_points(xy, rng.uniform(1.2, 3, 50), MOTION)
    cloud = np.c_[xy, pts.z]
    good = RigidObject(MOTION, cloud)
    bad = RigidObject(SE3(None, (0.3, 0, 0)) @ MOTION, cloud)
    assert np.all(joint_inlier_prob(pts, good, P) > joint_inlier_prob(pts, bad, P))


def test_point_to_point_symmetric():
    a = np.array([[0.0, 0.0, 2.0], [5.0, 1.0, 1.0]])
    b = np.array([[3.0, 4.0, 2.2], [5.0, 1.0, 1.0]])
    np.testing.assert_allclose(point_to_point_spatial_prob(a, b, P), point_to_point_spatial_prob(b, a, P))
    assert point_to_point_spatial_prob(a, b, P)[1] == 1.0


def test_log_likelihood_consistent_with_probabilities_ordering():
    pts = make_points([[10, 20]], 2.0, MOTION, extra=[[0.3, 0.1, 0.2]])
    obj = RigidObject(MOTION, [[10.0, 20.0, 2.0]])
    assert np.isfinite(joint_log_likelihood(pts, obj, P)).all()
    assert np.isfinite(spatial_log_likelihood(pts, obj, P)).all()
