"""Agreement between image points and rigid objects.

Two kinds of score are computed per point: an inlier probability (two-tailed
Gaussian tail mass beyond each residual, multiplied over residuals) used for
coverage, and a likelihood (product of Gaussian densities) used for the final
pixel assignment. Both share one case structure on the reliability flags:

=========================  ======================  ===============
flags                      motion residuals        spatial residuals
=========================  ======================  ===============
``r_t1 and r_t2``          du, dv, dd              dx, dy, dz_rel
``r_t1 and not r_t2``      du, dv                  dx, dy, dz_rel
``not r_t1``               none (score 1)          dx, dy
=========================  ======================  ===============

All functions here take a :class:`~sf2se3.preprocess.PointSet` and return one
value per point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import erfc

from .errors import EmptySpatialModelError
from .geometry import SE3, _project
from .preprocess import PointSet

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NoiseParams:
    sigma_u: float = 1.0
    sigma_v: float = 1.0
    sigma_d: float = 1.0
    sigma_geo_2d: float = 8.0
    sigma_geo_depth_rel: float = 0.03

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @classmethod
    def for_stride(cls, stride: int, **overrides) -> "NoiseParams":
        """Defaults with the spatial deviation tied to the sampling stride."""
        overrides.setdefault("sigma_geo_2d", 2.0 * stride)
        return cls(**overrides)


@dataclass(frozen=True, eq=False)
class RigidObject:
    """Spatial model (point cloud of ``(x_px, y_px, z_m)`` rows) plus motion.

    Proposals carry an empty cloud until they are selected.
    """

    motion: SE3
    cloud: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    def __post_init__(self):
        cloud = np.asarray(self.cloud, dtype=np.float64).reshape(-1, 3)
        cloud.flags.writeable = False
        object.__setattr__(self, "cloud", cloud)

    @property
    def has_cloud(self) -> bool:
        return len(self.cloud) > 0

    @cached_property
    def spatial_index(self) -> cKDTree:
        if not self.has_cloud:
            raise EmptySpatialModelError("object has no spatial model")
        return cKDTree(self.cloud[:, :2])

    def with_cloud(self, cloud) -> "RigidObject":
        return RigidObject(self.motion, cloud)


def gauss_inlier_prob(a, mu, sigma2):
    """Two-tailed tail mass ``2 (1 - Phi(|a - mu| / sigma))``; 1 at ``a == mu``."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError("variance must be positive")
    dev = np.abs(np.asarray(a, dtype=np.float64) - mu)
    return erfc(dev / np.sqrt(2.0 * sigma2))


def _gauss_log_density(r, sigma):
    return -0.5 * (r / sigma) ** 2 - math.log(sigma) - _LOG_SQRT_2PI


def motion_residuals(points: PointSet, motion: SE3):
    """``(du, dv, dd, in_front)`` of each point under ``motion``.

    Residuals are NaN where the needed inputs are missing (unreliable depth).
    """
    q = points.p_t1 @ motion.R.T + motion.t
    in_front = q[:, 2] > 0
    pu, pv, pd = _project(q, points.K)
    du = (points.x + points.u) - pu
    dv = (points.y + points.v) - pv
    dd = points.d - pd
    return du, dv, dd, in_front


def _prob(res, sigma):
    return erfc(np.abs(res) / (sigma * math.sqrt(2.0)))


def motion_inlier_prob(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    du, dv, dd, in_front = motion_residuals(points, obj.motion)
    with np.errstate(invalid="ignore"):
        p = _prob(du, params.sigma_u) * _prob(dv, params.sigma_v)
        p = np.where(points.r_t2, p * _prob(dd, params.sigma_d), p)
    p = np.where(in_front | ~points.r_t1, p, 0.0)
    return np.where(points.r_t1, p, 1.0)


def motion_log_likelihood(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    du, dv, dd, in_front = motion_residuals(points, obj.motion)
    with np.errstate(invalid="ignore"):
        ll = _gauss_log_density(du, params.sigma_u) + _gauss_log_density(dv, params.sigma_v)
        ll = np.where(points.r_t2, ll + _gauss_log_density(dd, params.sigma_d), ll)
    ll = np.where(in_front | ~points.r_t1, ll, -np.inf)
    return np.where(points.r_t1, ll, 0.0)


def spatial_residuals(points: PointSet, obj: RigidObject):
    """Offsets ``(dx, dy, dz_rel)`` to the nearest cloud point in pixel space."""
    _, nn = obj.spatial_index.query(points.xy, k=1)
    ref = obj.cloud[nn]
    dx = points.x - ref[:, 0]
    dy = points.y - ref[:, 1]
    with np.errstate(invalid="ignore"):
        dz_rel = (points.z - ref[:, 2]) / (0.5 * (points.z + ref[:, 2]))
    return dx, dy, dz_rel


def spatial_inlier_prob(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    dx, dy, dz_rel = spatial_residuals(points, obj)
    return _spatial_prob(dx, dy, dz_rel, points.r_t1, params)


def _spatial_prob(dx, dy, dz_rel, use_depth, params):
    p = _prob(dx, params.sigma_geo_2d) * _prob(dy, params.sigma_geo_2d)
    with np.errstate(invalid="ignore"):
        pz = _prob(dz_rel, params.sigma_geo_depth_rel)
    return np.where(use_depth, p * pz, p)


def point_to_point_spatial_prob(a, b, params: NoiseParams) -> np.ndarray:
    """Spatial inlier probability between rows of ``(x, y, z)`` arrays ``a`` and ``b``.

    Used for connectivity; both sides are expected to have valid depth.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dz_rel = (a[..., 2] - b[..., 2]) / (0.5 * (a[..., 2] + b[..., 2]))
    return _spatial_prob(a[..., 0] - b[..., 0], a[..., 1] - b[..., 1], dz_rel, True, params)


def spatial_log_likelihood(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    dx, dy, dz_rel = spatial_residuals(points, obj)
    s = params.sigma_geo_2d
    ll = _gauss_log_density(dx, s) + _gauss_log_density(dy, s)
    with np.errstate(invalid="ignore"):
        lz = _gauss_log_density(dz_rel, params.sigma_geo_depth_rel)
    return np.where(points.r_t1, ll + lz, ll)


def joint_inlier_prob(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    return spatial_inlier_prob(points, obj, params) * motion_inlier_prob(points, obj, params)


def joint_log_likelihood(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    return spatial_log_likelihood(points, obj, params) + motion_log_likelihood(points, obj, params)


def motion_likelihood(points, obj, params):
    return np.exp(motion_log_likelihood(points, obj, params))


def spatial_likelihood(points, obj, params):
    return np.exp(spatial_log_likelihood(points, obj, params))


def joint_likelihood(points, obj, params):
    return np.exp(joint_log_likelihood(points, obj, params))
