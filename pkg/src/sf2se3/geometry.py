"""Pinhole camera model and SE(3) algebra.

Conventions
-----------
* Pixel ``(x, y)`` is column/row of the pixel centre; ``x`` grows right, ``y`` down.
* Points are camera-frame 3-vectors in meters, ``z`` along the optical axis.
* Disparity is ``d = fx * baseline / z`` for stereo and RGB-D alike (RGB-D
  inputs carry a virtual baseline).
* ``SE3(R, t)`` maps ``p -> R @ p + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometryError,
    PointBehindCameraError,
    UnderdeterminedError,
)

ROTATION_TOL = 1e-9
_REORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid image size {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def fb(self) -> float:
        """Disparity-depth product ``fx * baseline``."""
        return self.fx * self.baseline


def backproject(x, y, z, K: CameraIntrinsics) -> np.ndarray:
    """Lift pixel(s) with depth to camera-frame point(s), shape ``(..., 3)``."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise ValueError("depth must be finite and positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.stack(
        np.broadcast_arrays((x - K.cx) * z / K.fx, (y - K.cy) * z / K.fy, z), axis=-1
    )


def _project(p: np.ndarray, K: CameraIntrinsics):
    # No sign check; callers mask points with z <= 0 themselves.
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_z = 1.0 / p[..., 2]
        u = K.fx * p[..., 0] * inv_z + K.cx
        v = K.fy * p[..., 1] * inv_z + K.cy
        d = K.fb * inv_z
    return u, v, d


def project_uvd(p, K: CameraIntrinsics):
    """Project point(s) to pixel coordinates and disparity.

    Returns ``(u, v, d)`` where ``u, v`` are image coordinates (not flow).
    Raises :class:`PointBehindCameraError` if any point has ``z <= 0``.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p[..., 2] <= 0):
        raise PointBehindCameraError("cannot project points with z <= 0")
    return _project(p, K)


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def hat(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues' formula: axis-angle vector to rotation matrix."""
    w = np.asarray(w, dtype=np.float64)
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-8:
        # Second-order Taylor expansion; error O(theta^3).
        return np.eye(3) + W + 0.5 * (W @ W)
    return (
        np.eye(3)
        + (math.sin(theta) / theta) * W
        + ((1.0 - math.cos(theta)) / theta**2) * (W @ W)
    )


def axis_angle(R) -> np.ndarray:
    """Rotation matrix to axis-angle vector with norm in ``[0, pi]``."""
    R = np.asarray(R, dtype=np.float64)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(vee)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(s, c)
    if theta < 1e-8:
        return 0.5 * vee
    if theta < math.pi - 1e-3:
        return (theta / (2.0 * math.sin(theta))) * vee
    # Near pi the skew part vanishes; read the axis off the symmetric part
    # (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
    S = 0.5 * (R + R.T) - c * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / math.sqrt(max(S[k, k], 1e-300))
    axis /= np.linalg.norm(axis)
    if axis @ vee < 0:
        axis = -axis
    return theta * axis


class SE3:
    """Immutable rigid transform ``p -> R p + t``."""

    __slots__ = ("_R", "_t")

    def __init__(self, R=None, t=None):
        R = np.eye(3) if R is None else np.array(R, dtype=np.float64)
        t = np.zeros(3) if t is None else np.array(t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("SE3 entries must be finite")
        err = max(
            np.abs(R.T @ R - np.eye(3)).max(), abs(np.linalg.det(R) - 1.0)
        )
        if err > ROTATION_TOL:
            if err > _REORTHO_TOL:
                raise ValueError(f"not a rotation matrix (error {err:.3g})")
            R = _orthonormalize(R)
        R.flags.writeable = False
        t.flags.writeable = False
        self._R = R
        self._t = t

    @property
    def R(self) -> np.ndarray:
        return self._R

    @property
    def t(self) -> np.ndarray:
        return self._t

    @classmethod
    def identity(cls) -> "SE3":
        return cls()

    @classmethod
    def from_axis_angle(cls, w, t=None) -> "SE3":
        return cls(exp_so3(w), t)

    @classmethod
    def from_matrix(cls, T) -> "SE3":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self._R
        T[:3, 3] = self._t
        return T

    def apply(self, p) -> np.ndarray:
        """Transform point(s) of shape ``(3,)`` or ``(N, 3)``."""
        return np.asarray(p, dtype=np.float64) @ self._R.T + self._t

    def inverse(self) -> "SE3":
        Rt = self._R.T
        return SE3(Rt, -Rt @ self._t)

    def __matmul__(self, other: "SE3") -> "SE3":
        return SE3(self._R @ other._R, self._R @ other._t + self._t)

    def axis_angle(self) -> np.ndarray:
        return axis_angle(self._R)

    def angle(self) -> float:
        return float(np.linalg.norm(axis_angle(self._R)))

    def __eq__(self, other):
        if not isinstance(other, SE3):
            return NotImplemented
        return np.array_equal(self._R, other._R) and np.array_equal(self._t, other._t)

    def __hash__(self):
        return hash((self._R.tobytes(), self._t.tobytes()))

    def __repr__(self):
        return f"SE3(R={self._R.tolist()}, t={self._t.tolist()})"


def se3_apply(T: SE3, p) -> np.ndarray:
    return T.apply(p)


def fit_se3(src, dst, weights=None) -> SE3:
    """Weighted least-squares rigid transform from ``src`` onto ``dst``.

    Minimises ``sum_i w_i |R src_i + t - dst_i|^2`` in closed form (weighted
    Kabsch: SVD of the weighted cross-covariance, reflection corrected).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"shape mismatch {src.shape} vs {dst.shape}")
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(src),) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite, non-negative, one per point")
    active = w > 0
    if active.sum() < 3:
        raise UnderdeterminedError(f"need >= 3 weighted points, got {int(active.sum())}")
    src, dst, w = src[active], dst[active], w[active]
    w = w / w.sum()

    mu_src = w @ src
    mu_dst = w @ dst
    A = src - mu_src
    B = dst - mu_dst

    # Collinear or coincident sources leave the rotation about their line free.
    spread = np.linalg.svd(A * np.sqrt(w)[:, None], compute_uv=False)
    if spread[0] <= 1e-12 or spread[1] <= 1e-9 * spread[0]:
        raise DegenerateGeometryError("source points are collinear or coincident")

    H = (A * w[:, None]).T @ B
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    t = mu_dst - R @ mu_src
    return SE3(R, t)


def random_rotation(rng: np.random.Generator, max_angle: float = math.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))
