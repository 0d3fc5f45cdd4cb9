"""From a frame pair to the set of downsampled image points.

The second depth map is brought into the reference frame by backward warping
along the forward flow. Depth reliability flags record invalid measurements
(both frames) and forward-backward flow inconsistencies (second frame only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyPointSetError
from .geometry import CameraIntrinsics, backproject

DEFAULT_STRIDE = 4
DEFAULT_OCCLUSION_LIMIT = 1.5
DEFAULT_DEPTH_JUMP = 0.1


@dataclass(frozen=True)
class FramePairInput:
    K: CameraIntrinsics
    depth1: np.ndarray
    depth2: np.ndarray
    flow_fwd: np.ndarray
    flow_bwd: np.ndarray | None = None
    valid1: np.ndarray | None = None
    valid2: np.ndarray | None = None

    def __post_init__(self):
        shape = self.K.shape
        for name in ("depth1", "depth2", "valid1", "valid2"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        for name in ("flow_fwd", "flow_bwd"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != shape + (2,):
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape + (2,)}")

    def mask1(self) -> np.ndarray:
        m = np.isfinite(self.depth1) & (self.depth1 > 0)
        return m if self.valid1 is None else m & self.valid1

    def mask2(self) -> np.ndarray:
        m = np.isfinite(self.depth2) & (self.depth2 > 0)
        return m if self.valid2 is None else m & self.valid2


@dataclass(frozen=True)
class ImagePoint:
    x: float
    y: float
    z: float
    p_t1: np.ndarray
    p_t2: np.ndarray
    u: float
    v: float
    d: float
    r_t1: bool
    r_t2: bool


def _nan_points(n):
    return np.full((n, 3), np.nan)


@dataclass
class PointSet:
    """Image points as parallel arrays of length ``N``.

    ``x, y`` are pixel coordinates at the reference time, ``z`` the depth there,
    ``u, v`` the optical flow and ``d`` the warped disparity at the second time.
    Entries behind a cleared reliability flag are NaN.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    p_t1: np.ndarray
    p_t2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    d: np.ndarray
    r_t1: np.ndarray
    r_t2: np.ndarray
    stride: int = 1
    source_size: tuple[int, int] = (0, 0)
    K: CameraIntrinsics | None = None

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> ImagePoint:
        return ImagePoint(
            float(self.x[i]), float(self.y[i]), float(self.z[i]),
            self.p_t1[i].copy(), self.p_t2[i].copy(),
            float(self.u[i]), float(self.v[i]), float(self.d[i]),
            bool(self.r_t1[i]), bool(self.r_t2[i]),
        )

    @property
    def reliable(self) -> np.ndarray:
        return self.r_t1 & self.r_t2

    @property
    def xy(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    def subset(self, idx) -> "PointSet":
        idx = np.asarray(idx)
        return PointSet(
            self.x[idx], self.y[idx], self.z[idx], self.p_t1[idx], self.p_t2[idx],
            self.u[idx], self.v[idx], self.d[idx], self.r_t1[idx], self.r_t2[idx],
            self.stride, self.source_size, self.K,
        )

    @classmethod
    def from_points(cls, points, K=None, stride: int = 1, source_size=(0, 0)) -> "PointSet":
        points = list(points)
        col = lambda name: np.array([getattr(p, name) for p in points], dtype=np.float64)
        n = len(points)
        return cls(
            col("x"), col("y"), col("z"),
            np.array([p.p_t1 for p in points], dtype=np.float64).reshape(n, 3),
            np.array([p.p_t2 for p in points], dtype=np.float64).reshape(n, 3),
            col("u"), col("v"), col("d"),
            np.array([p.r_t1 for p in points], dtype=bool),
            np.array([p.r_t2 for p in points], dtype=bool),
            stride, tuple(source_size), K,
        )


def _taps(shape, xs, ys):
    """Inside mask and the four ``(row, col, weight)`` bilinear taps per sample."""
    H, W = shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = np.isfinite(xs) & np.isfinite(ys)
    inside &= (xs >= 0) & (xs <= W - 1) & (ys >= 0) & (ys <= H - 1)
    xq = np.where(inside, xs, 0.0)
    yq = np.where(inside, ys, 0.0)
    x0 = np.clip(np.floor(xq).astype(np.intp), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(yq).astype(np.intp), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ax = xq - x0
    ay = yq - y0
    taps = (
        (y0, x0, (1 - ax) * (1 - ay)),
        (y0, x1, ax * (1 - ay)),
        (y1, x0, (1 - ax) * ay),
        (y1, x1, ax * ay),
    )
    return inside, taps


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H x W or H x W x C) at subpixel locations.

    A sample is NaN when it falls outside ``[0, W-1] x [0, H-1]`` or when any
    tap carrying non-zero weight is non-finite.
    """
    inside, taps = _taps(img.shape[:2], xs, ys)
    chan = img.ndim == 3
    out = None
    for r, c, wgt in taps:
        val = img[r, c]
        if chan:
            wgt = wgt[..., None]
        if out is None:
            out = np.zeros(np.broadcast_shapes(val.shape, wgt.shape))
            bad = ~(inside[..., None] if chan else inside) & np.ones(out.shape, dtype=bool)
        used = wgt > 0
        bad |= used & ~np.isfinite(val)
        out += np.where(used, val, 0.0) * wgt
    out[bad] = np.nan
    return out


def tap_depth_spread(depth2: np.ndarray, flow_fwd: np.ndarray) -> np.ndarray:
    """Relative depth range ``max / min - 1`` over the taps a backward warp blends.

    Large values mean the sample mixes surfaces on both sides of a depth
    discontinuity. NaN where the warp itself is invalid.
    """
    X, Y = _grid(depth2.shape)
    inside, taps = _taps(depth2.shape, X + flow_fwd[..., 0], Y + flow_fwd[..., 1])
    d2 = np.where(np.isfinite(depth2) & (depth2 > 0), depth2, np.nan)
    lo = np.full(depth2.shape, np.inf)
    hi = np.full(depth2.shape, -np.inf)
    for r, c, wgt in taps:
        used = wgt > 0
        val = d2[r, c]
        lo = np.where(used, np.fmin(lo, val), lo)
        hi = np.where(used, np.fmax(hi, val), hi)
        hi = np.where(used & np.isnan(val), np.nan, hi)
    with np.errstate(invalid="ignore"):
        spread = hi / lo - 1.0
    return np.where(inside, spread, np.nan)


def _grid(shape):
    H, W = shape
    return np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))


def warp_depth_backward(depth2: np.ndarray, flow_fwd: np.ndarray) -> np.ndarray:
    """Second-frame depth resampled at the reference pixels ``(x + u, y + v)``."""
    if depth2.shape != flow_fwd.shape[:2]:
        raise ValueError("depth and flow shapes differ")
    X, Y = _grid(depth2.shape)
    d2 = np.where(np.isfinite(depth2) & (depth2 > 0), depth2, np.nan)
    return bilinear_sample(d2, X + flow_fwd[..., 0], Y + flow_fwd[..., 1])


def detect_occlusion(flow_fwd: np.ndarray, flow_bwd: np.ndarray, limit_px: float) -> np.ndarray:
    """Forward-backward consistency check; True marks occluded pixels."""
    if not limit_px > 0:
        raise ValueError("occlusion limit must be positive")
    X, Y = _grid(flow_fwd.shape[:2])
    back = bilinear_sample(flow_bwd, X + flow_fwd[..., 0], Y + flow_fwd[..., 1])
    err = np.linalg.norm(flow_fwd + back, axis=-1)
    # NaN (out of bounds or invalid backward flow) compares False -> occluded.
    return ~(err <= limit_px)


def build_point_set(
    frame: FramePairInput,
    stride: int = DEFAULT_STRIDE,
    occl_limit_px: float = DEFAULT_OCCLUSION_LIMIT,
    depth_jump_rel: float | None = DEFAULT_DEPTH_JUMP,
) -> PointSet:
    """Downsampled image points of ``frame`` on a ``stride`` grid.

    Second-frame depth is unreliable where it is missing, occluded, or (with
    ``depth_jump_rel`` set) interpolated across a relative depth jump larger
    than ``depth_jump_rel``. Points without valid flow are dropped.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if depth_jump_rel is not None and not depth_jump_rel > 0:
        raise ValueError("depth_jump_rel must be positive")
    K = frame.K
    H, W = K.shape
    depth1 = np.where(frame.mask1(), frame.depth1, np.nan)
    depth2 = np.where(frame.mask2(), frame.depth2, np.nan)
    flow = frame.flow_fwd

    warped = warp_depth_backward(depth2, flow)
    if frame.flow_bwd is not None:
        occluded = detect_occlusion(flow, frame.flow_bwd, occl_limit_px)
    else:
        occluded = np.zeros((H, W), dtype=bool)

    gy, gx = np.meshgrid(np.arange(0, H, stride), np.arange(0, W, stride), indexing="ij")
    gy, gx = gy.ravel(), gx.ravel()
    u = flow[gy, gx, 0].astype(np.float64)
    v = flow[gy, gx, 1].astype(np.float64)
    keep = np.isfinite(u) & np.isfinite(v)
    if not keep.any():
        raise EmptyPointSetError("no pixel has valid optical flow")
    gy, gx, u, v = gy[keep], gx[keep], u[keep], v[keep]

    z = depth1[gy, gx].astype(np.float64)
    r_t1 = np.isfinite(z)
    z2 = warped[gy, gx]
    r_t2 = r_t1 & np.isfinite(z2) & ~occluded[gy, gx]
    if depth_jump_rel is not None:
        spread = tap_depth_spread(depth2, flow)[gy, gx]
        r_t2 &= spread <= depth_jump_rel

    x = gx.astype(np.float64)
    y = gy.astype(np.float64)
    n = len(x)
    p_t1 = _nan_points(n)
    p_t1[r_t1] = backproject(x[r_t1], y[r_t1], z[r_t1], K)
    p_t2 = _nan_points(n)
    p_t2[r_t2] = backproject(x[r_t2] + u[r_t2], y[r_t2] + v[r_t2], z2[r_t2], K)
    d = np.full(n, np.nan)
    d[r_t2] = K.fb / z2[r_t2]

    return PointSet(x, y, z, p_t1, p_t2, u, v, d, r_t1, r_t2, stride, (H, W), K)
