"""Background, camera odometry, dense labels and scene flow from the objects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import NoiseParams, RigidObject, joint_inlier_prob, joint_log_likelihood, motion_inlier_prob
from .errors import NoObjectError
from .geometry import SE3, CameraIntrinsics, backproject
from .preprocess import PointSet

UNASSIGNED = -1


@dataclass
class SceneResult:
    objects: list[RigidObject]
    labels: np.ndarray
    background_idx: int
    odometry: SE3
    scene_flow: np.ndarray
    # downsampled points and per-iteration log, kept for debugging dumps
    points: PointSet | None = None
    history: list | None = None


def select_background(objects, points: PointSet, noise_params: NoiseParams) -> int:
    """Index of the object contributing most against all *other* objects.

    Ties go to the lowest index.
    """
    if not objects:
        raise NoObjectError("no objects to choose a background from")
    joint = np.array([joint_inlier_prob(points, o, noise_params) for o in objects])
    scores = []
    for k, obj in enumerate(objects):
        others = np.delete(joint, k, axis=0)
        cover = others.max(axis=0) if len(others) else np.zeros(len(points))
        p = motion_inlier_prob(points, obj, noise_params)
        scores.append(float(np.mean(np.maximum(p - cover, 0.0))))
    return int(np.argmax(scores))


def assign_pixels(objects, points: PointSet, noise_params: NoiseParams) -> np.ndarray:
    """Maximum-likelihood object index per point, ties to the lowest index."""
    if not objects:
        raise NoObjectError("no objects to assign pixels to")
    ll = np.array([joint_log_likelihood(points, o, noise_params) for o in objects])
    ll = np.where(np.isnan(ll), -np.inf, ll)
    return np.argmax(ll, axis=0)


def label_image(objects, full_points: PointSet, noise_params: NoiseParams, shape) -> np.ndarray:
    """Dense label map; pixels absent from ``full_points`` get ``UNASSIGNED``."""
    labels = np.full(shape, UNASSIGNED, dtype=np.int32)
    if len(full_points):
        idx = assign_pixels(objects, full_points, noise_params)
        labels[full_points.y.astype(np.intp), full_points.x.astype(np.intp)] = idx
    return labels


def derive_scene_flow(labels: np.ndarray, objects, depth1: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Per-pixel ``R p + t - p``; NaN where unlabeled or depth is invalid."""
    H, W = labels.shape
    flow = np.full((H, W, 3), np.nan)
    ys, xs = np.nonzero((labels != UNASSIGNED) & np.isfinite(depth1) & (depth1 > 0))
    if len(ys) == 0:
        return flow
    p = backproject(xs, ys, depth1[ys, xs], K)
    lab = labels[ys, xs]
    for k, obj in enumerate(objects):
        m = lab == k
        if m.any():
            flow[ys[m], xs[m]] = obj.motion.apply(p[m]) - p[m]
    return flow


def derive_odometry(objects, background_idx: int) -> SE3:
    """Camera motion: the inverse of the background's apparent motion."""
    return objects[background_idx].motion.inverse()
