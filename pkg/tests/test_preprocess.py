import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sf2se3.errors import EmptyPointSetError
from sf2se3.geometry import SE3, CameraIntrinsics
from sf2se3.preprocess import (
    FramePairInput,
    PointSet,
    bilinear_sample,
    build_point_set,
    detect_occlusion,
    tap_depth_spread,
    warp_depth_backward,
)
from sf2se3.synthetic import Body, SceneSpec, background_plane, default_intrinsics, render


def small_K(H=16, W=20):
    return CameraIntrinsics(50.0, 50.0, (W - 1) / 2, (H - 1) / 2, 0.2, W, H)


def static_frame(H=16, W=20, depth=2.0):
    K = small_K(H, W)
    d = np.full((H, W), depth)
    z = np.zeros((H, W, 2))
    return FramePairInput(K, d, d.copy(), z, z.copy())


def test_frame_shape_validation():
    K = small_K()
    with pytest.raises(ValueError):
        FramePairInput(K, np.ones((3, 3)), np.ones((16, 20)), np.zeros((16, 20, 2)))
    with pytest.raises(ValueError):
        FramePairInput(K, np.ones((16, 20)), np.ones((16, 20)), np.zeros((16, 20, 3)))


def test_bilinear_hand_value():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])
    # 0.75*0.5*0 + 0.25*0.5*1 + 0.75*0.5*2 + 0.25*0.5*3
    assert bilinear_sample(img, np.array([0.25]), np.array([0.5]))[0] == pytest.approx(1.25, abs=1e-15)


def test_bilinear_invalid_tap_and_bounds():
    img = np.array([[0.0, np.nan], [2.0, 3.0]])
    out = bilinear_sample(img, np.array([0.5, 0.0, -0.1, 1.0]), np.array([0.5, 1.0, 0.0, 1.01]))
    assert np.isnan(out[0])
    assert out[1] == 2.0
    assert np.isnan(out[2]) and np.isnan(out[3])


def test_bilinear_multichannel():
    img = np.stack([np.arange(4.0).reshape(2, 2), -np.arange(4.0).reshape(2, 2)], axis=-1)
    out = bilinear_sample(img, np.array([0.5]), np.array([0.5]))
    np.testing.assert_allclose(out, [[1.5, -1.5]])


def test_warp_zero_flow_identity():
    rng = np.random.default_rng(0)
    d = rng.uniform(1, 3, (8, 9))
    d[2, 3] = np.nan
    w = warp_depth_backward(d, np.zeros((8, 9, 2)))
    valid = np.isfinite(d)
    np.testing.assert_array_equal(w[valid], d[valid])
    assert np.isnan(w[2, 3])


def test_warp_out_of_image():
    d = np.ones((5, 5))
    flow = np.zeros((5, 5, 2))
    flow[2, 2] = (10.0, 0.0)
    w = warp_depth_backward(d, flow)
    assert np.isnan(w[2, 2]) and np.isfinite(w).sum() == 24


def test_warp_ramp_shift():
    H, W = 6, 8
    depth2 = np.tile(np.arange(W, dtype=float), (H, 1))
    flow = np.zeros((H, W, 2))
    flow[..., 0] = 1.0
    w = warp_depth_backward(depth2, flow)
    X = np.tile(np.arange(W, dtype=float), (H, 1))
    np.testing.assert_array_equal(w[:, :-1], X[:, :-1] + 1.0)
    assert np.all(np.isnan(w[:, -1]))


def test_warp_half_pixel_ramp():
    depth2 = np.tile(np.arange(6, dtype=float) * 2.0 + 1.0, (4, 1))
    flow = np.zeros((4, 6, 2))
    flow[..., 0] = 0.5
    w = warp_depth_backward(depth2, flow)
    np.testing.assert_allclose(w[:, :-1], depth2[:, :-1] + 1.0)


def test_occlusion_consistent_and_inconsistent():
    rng = np.random.default_rng(1)
    fwd = rng.integers(-2, 3, (10, 10, 2)).astype(float)
    bwd = np.zeros_like(fwd)
    X, Y = np.meshgrid(np.arange(10), np.arange(10))
    tx, ty = X + fwd[..., 0].astype(int), Y + fwd[..., 1].astype(int)
    inside = (tx >= 0) & (tx < 10) & (ty >= 0) & (ty < 10)
    bwd[ty[inside], tx[inside]] = -fwd[inside]
    occ = detect_occlusion(fwd, bwd, 1.5)
    # pixels whose target is hit by several sources get one writer only
    ok = inside & np.all(bwd[np.clip(ty, 0, 9), np.clip(tx, 0, 9)] == -fwd, axis=-1)
    assert not occ[ok].any()
    assert occ[~inside].all()


def test_occlusion_constant_offset():
    fwd = np.zeros((6, 6, 2))
    assert not detect_occlusion(fwd, -fwd, 1.5).any()
    bwd = -fwd.copy()
    bwd[..., 0] += 2.5
    assert detect_occlusion(fwd, bwd, 1.5).all()


def test_occlusion_quadrant():
    fwd = np.ones((8, 8, 2))
    fwd[..., 1] = 0.0
    bwd = -fwd.copy()
    bwd[:4, 4:, 0] += 5.0     # bad backward flow in the top right quadrant
    occ = detect_occlusion(fwd, bwd, 1.0)
    expected = np.zeros((8, 8), dtype=bool)
    # a source pixel looks up its target one column to the right
    expected[:4, 3:7] = True
    expected[:, 7] = True       # target out of bounds
    np.testing.assert_array_equal(occ, expected)


def test_occlusion_monotone_in_limit():
    rng = np.random.default_rng(5)
    fwd = rng.normal(0, 1, (12, 12, 2))
    bwd = -fwd + rng.normal(0, 1, (12, 12, 2))
    prev = detect_occlusion(fwd, bwd, 0.1)
    for limit in (0.5, 1.0, 2.0, 4.0):
        cur = detect_occlusion(fwd, bwd, limit)
        assert not (cur & ~prev).any()
        prev = cur
    with pytest.raises(ValueError):
        detect_occlusion(fwd, bwd, 0.0)


def test_static_point_set():
    frame = static_frame()
    ps = build_point_set(frame, stride=1)
    assert len(ps) == 16 * 20
    assert ps.r_t1.all() and ps.r_t2.all()
    np.testing.assert_allclose(ps.p_t2, ps.p_t1, atol=1e-15)
    np.testing.assert_allclose(ps.d, frame.K.fb / 2.0)


def test_grid_count():
    frame = static_frame(64, 64)
    ps = build_point_set(frame, stride=4)
    assert len(ps) == 256
    assert set(np.unique(ps.x)) == set(range(0, 64, 4))
    # sorted by (y, x)
    order = np.lexsort((ps.x, ps.y))
    np.testing.assert_array_equal(order, np.arange(len(ps)))


def test_flags_and_dropped_points():
    frame = static_frame()
    d1 = frame.depth1.copy()
    d1[0, 0] = np.nan
    d2 = frame.depth2.copy()
    d2[0, 1] = np.nan
    flow = frame.flow_fwd.copy()
    flow[0, 2] = np.nan
    valid1 = np.ones(d1.shape, dtype=bool)
    valid1[0, 3] = False
    f = FramePairInput(frame.K, d1, d2, flow, frame.flow_bwd, valid1=valid1)
    ps = build_point_set(f, stride=1)
    assert len(ps) == 16 * 20 - 1
    pt = {(int(p.x), int(p.y)): p for p in (ps[i] for i in range(4))}
    assert not pt[(0, 0)].r_t1 and not pt[(0, 0)].r_t2
    assert pt[(1, 0)].r_t1 and not pt[(1, 0)].r_t2 and np.isnan(pt[(1, 0)].d)
    assert (2, 0) not in pt
    assert not pt[(3, 0)].r_t1


def test_no_valid_flow():
    frame = static_frame()
    f = FramePairInput(frame.K, frame.depth1, frame.depth2, np.full_like(frame.flow_fwd, np.nan))
    with pytest.raises(EmptyPointSetError):
        build_point_set(f)
    with pytest.raises(ValueError):
        build_point_set(frame, stride=0)


def test_translating_plane_matches_planted_translation():
    K = default_intrinsics(64, 64)
    t = np.array([0.05, -0.03, 0.1])
    spec = SceneSpec(K, (background_plane(),), camera_motion=SE3(None, -t))
    frame, gt = render(spec)
    ps = build_point_set(frame, stride=2)
    m = ps.r_t2
    assert m.sum() > 0.5 * len(ps)
    # depth blending on a tilted plane is smooth but not exact
    np.testing.assert_allclose(ps.p_t2[m] - ps.p_t1[m], np.broadcast_to(t, (m.sum(), 3)), atol=2e-3)
    pix = ps.p_t2[m]
    assert np.median(np.linalg.norm(pix - ps.p_t1[m] - t, axis=1)) < 1e-4


def test_fronto_parallel_translation_exact():
    # constant depth and integer-pixel flow make the warp exact
    K = CameraIntrinsics(100.0, 100.0, 31.5, 31.5, 0.5, 64, 64)
    plane = Body("plane", SE3(None, (0.0, 0.0, 2.0)), (np.inf, np.inf))
    t = np.array([0.04, 0.0, 0.0])
    frame, _ = render(SceneSpec(K, (plane,), camera_motion=SE3(None, -t)))
    ps = build_point_set(frame, stride=4)
    m = ps.r_t2
    np.testing.assert_allclose(ps.p_t2[m] - ps.p_t1[m], np.broadcast_to(t, (m.sum(), 3)), atol=1e-6)


def test_depth_jump_marks_unreliable():
    H, W = 10, 10
    K = small_K(H, W)
    d = np.full((H, W), 2.0)
    d[:, 5:] = 1.0
    flow = np.zeros((H, W, 2))
    flow[..., 0] = 0.5
    f = FramePairInput(K, d, d, flow)
    spread = tap_depth_spread(d, flow)
    assert spread[0, 4] == pytest.approx(1.0) and spread[0, 0] == 0.0
    ps = build_point_set(f, stride=1)
    at = lambda x, y: ps[int(np.flatnonzero((ps.x == x) & (ps.y == y))[0])]
    assert not at(4, 0).r_t2 and at(3, 0).r_t2
    ps = build_point_set(f, stride=1, depth_jump_rel=None)
    assert at(4, 0).r_t2


def test_point_set_subset_and_from_points():
    ps = build_point_set(static_frame(), stride=2)
    sub = ps.subset([0, 3, 5])
    assert len(sub) == 3 and sub[1].x == ps[3].x
    again = PointSet.from_points([ps[i] for i in range(len(ps))], K=ps.K, stride=2)
    np.testing.assert_array_equal(again.p_t1, ps.p_t1)
    np.testing.assert_array_equal(again.r_t2, ps.r_t2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_point_invariants_fuzz(seed, stride):
    rng = np.random.default_rng(seed)
    H, W = 12, 14
    K = small_K(H, W)
    d1 = rng.uniform(0.5, 4, (H, W))
    d2 = rng.uniform(0.5, 4, (H, W))
    d1[rng.random((H, W)) < 0.2] = np.nan
    d2[rng.random((H, W)) < 0.2] = -1.0
    fwd = rng.normal(0, 3, (H, W, 2))
    fwd[rng.random((H, W)) < 0.1] = np.nan
    bwd = rng.normal(0, 3, (H, W, 2))
    frame = FramePairInput(K, d1, d2, fwd, bwd, valid1=rng.random((H, W)) > 0.1)
    try:
        ps = build_point_set(frame, stride)
    except EmptyPointSetError:
        return
    assert np.all(ps.r_t1[ps.r_t2])
    assert np.all(np.isfinite(ps.z[ps.r_t1]) & (ps.z[ps.r_t1] > 0))
    assert np.all(np.isfinite(ps.d[ps.r_t2]) & (ps.d[ps.r_t2] > 0))
    assert np.all(np.isfinite(ps.u) & np.isfinite(ps.v))
    assert np.all(ps.x % stride == 0) and np.all(ps.y % stride == 0)
    assert len(set(zip(ps.x, ps.y))) == len(ps)
