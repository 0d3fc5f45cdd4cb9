"""Ray-cast synthetic rigid scenes with exact ground truth.

The reference camera frame coincides with the world frame. Body ``b`` moves
by its world motion ``M_b`` and the camera by ``T_c`` (pose of the second
camera in the first). A point on body ``b`` is therefore seen at the second
time step at ``S_b p`` with ``S_b = T_c^-1 M_b``, the apparent motion the
estimator should recover. The static background has ``S = T_c^-1`` and the
odometry is ``T_c``.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSceneError
from .geometry import SE3, CameraIntrinsics, _project
from .preprocess import FramePairInput

SHAPES = ("box", "sphere", "plane")
_EPS = 1e-9


@dataclass(frozen=True)
class Body:
    """Analytic shape placed by ``pose`` (local to reference camera frame).

    ``extent``: box half-sizes ``(a, b, c)``, sphere ``(radius,)``, plane
    rectangle half-sizes ``(a, b)`` in its local x-y plane (``inf`` allowed).
    """

    shape: str
    pose: SE3
    extent: tuple
    motion: SE3 = field(default_factory=SE3.identity)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        need = {"box": 3, "sphere": 1, "plane": 2}[self.shape]
        if len(self.extent) != need or any(not e > 0 for e in self.extent):
            raise ValueError(f"{self.shape} needs {need} positive extents, got {self.extent}")


@dataclass(frozen=True)
class NoiseSpec:
    flow_sigma_px: float = 0.0
    depth_rel_sigma: float = 0.0
    outlier_frac: float = 0.0

    def __post_init__(self):
        if min(self.flow_sigma_px, self.depth_rel_sigma, self.outlier_frac) < 0:
            raise ValueError("noise parameters must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    K: CameraIntrinsics
    bodies: tuple
    camera_motion: SE3 = field(default_factory=SE3.identity)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    rng_seed: int = 0


@dataclass
class GroundTruth:
    instances: np.ndarray        # H x W body index at the reference time, -1 = empty
    body_motions: list           # apparent motion S_b per body
    camera_motion: SE3
    scene_flow: np.ndarray       # H x W x 3, NaN where undefined
    flow: np.ndarray             # exact forward optical flow
    disp1: np.ndarray
    disp2: np.ndarray            # disparity of the advected point
    occluded: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.instances >= 0

    def motion_map(self) -> dict:
        return dict(enumerate(self.body_motions))


def motion_about(center, rotvec=(0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)) -> SE3:
    """World motion rotating by ``rotvec`` about ``center``, then translating."""
    c = np.asarray(center, dtype=np.float64)
    R = SE3.from_axis_angle(rotvec).R
    return SE3(R, c - R @ c + np.asarray(translation, dtype=np.float64))


def _ray_dirs(K: CameraIntrinsics, xs, ys) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)


def _intersect(shape: str, pose: SE3, extent, dirs: np.ndarray) -> np.ndarray:
    """Ray parameter (equal to depth, since ``dir_z == 1``) of the first hit; inf if none."""
    o = -pose.R.T @ pose.t
    d = dirs @ pose.R
    with np.errstate(divide="ignore", invalid="ignore"):
        if shape == "sphere":
            r = extent[0]
            a = np.sum(d * d, axis=-1)
            b = 2.0 * d @ o
            c = o @ o - r * r
            disc = b * b - 4 * a * c
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            t0 = (-b - sq) / (2 * a)
            t1 = (-b + sq) / (2 * a)
            t = np.where(t0 > _EPS, t0, np.where(t1 > _EPS, t1, np.inf))
        elif shape == "box":
            e = np.asarray(extent, dtype=np.float64)
            ta = (-e - o) / d
            tb = (e - o) / d
            tmin = np.nanmax(np.minimum(ta, tb), axis=-1)
            tmax = np.nanmin(np.maximum(ta, tb), axis=-1)
            hit = tmax >= np.maximum(tmin, _EPS)
            t = np.where(hit, np.where(tmin > _EPS, tmin, tmax), np.inf)
        else:
            t = -o[2] / d[..., 2]
            hx = np.abs(o[0] + t * d[..., 0]) <= extent[0]
            hy = np.abs(o[1] + t * d[..., 1]) <= extent[1]
            t = np.where((t > _EPS) & hx & hy, t, np.inf)
    return np.where(np.isnan(t), np.inf, t)


def raycast(poses, bodies, K: CameraIntrinsics, xs, ys):
    """Z-buffered depth and body index along the rays through ``(xs, ys)``."""
    dirs = _ray_dirs(K, xs, ys)
    depth = np.full(dirs.shape[:-1], np.inf)
    index = np.full(dirs.shape[:-1], -1, dtype=np.int32)
    for k, (pose, body) in enumerate(zip(poses, bodies)):
        t = _intersect(body.shape, pose, body.extent, dirs)
        closer = t < depth
        depth = np.where(closer, t, depth)
        index = np.where(closer, k, index)
    depth = np.where(np.isfinite(depth), depth, np.nan)
    return depth, index


def render(spec: SceneSpec):
    """Rendered :class:`FramePairInput` and its :class:`GroundTruth`."""
    K = spec.K
    H, W = K.shape
    X, Y = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    bodies = list(spec.bodies)
    cam_inv = spec.camera_motion.inverse()
    apparent = [cam_inv @ b.motion for b in bodies]

    depth1, inst1 = raycast([b.pose for b in bodies], bodies, K, X, Y)
    if not np.any(inst1 >= 0):
        raise DegenerateSceneError("no body is visible")
    p1 = _ray_dirs(K, X, Y) * depth1[..., None]

    p2 = np.full_like(p1, np.nan)
    for k, S in enumerate(apparent):
        m = inst1 == k
        p2[m] = S.apply(p1[m])
    ahead = p2[..., 2] > 0
    u2, v2, d2 = _project(p2, K)
    flow = np.stack([u2 - X, v2 - Y], axis=-1)
    flow[~ahead] = np.nan
    disp2 = np.where(ahead, d2, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        disp1 = K.fb / depth1
    scene_flow = p2 - p1
    scene_flow[~ahead] = np.nan

    poses2 = [S @ b.pose for S, b in zip(apparent, bodies)]
    depth2, inst2 = raycast(poses2, bodies, K, X, Y)
    q = _ray_dirs(K, X, Y) * depth2[..., None]
    back = np.full_like(q, np.nan)
    for k, S in enumerate(apparent):
        m = inst2 == k
        back[m] = S.inverse().apply(q[m])
    ub, vb, _ = _project(back, K)
    flow_bwd = np.stack([ub - X, vb - Y], axis=-1)
    flow_bwd[~(back[..., 2] > 0)] = np.nan

    # Occluded: the advected point leaves the image or is hidden at time 2.
    inside = ahead & (u2 >= 0) & (u2 <= W - 1) & (v2 >= 0) & (v2 <= H - 1)
    z_hit, _ = raycast(poses2, bodies, K, np.where(inside, u2, 0.0), np.where(inside, v2, 0.0))
    visible = inside & (np.abs(z_hit - p2[..., 2]) <= 1e-7 * np.abs(p2[..., 2]) + 1e-9)
    occluded = (inst1 >= 0) & ~visible

    gt = GroundTruth(
        instances=inst1.astype(np.int32), body_motions=apparent,
        camera_motion=spec.camera_motion, scene_flow=scene_flow, flow=flow.copy(),
        disp1=disp1, disp2=disp2, occluded=occluded,
    )
    flow_obs, flow_bwd, depth1, depth2 = _add_noise(spec, flow, flow_bwd, depth1, depth2)
    frame = FramePairInput(
        K, depth1, depth2, flow_obs, flow_bwd,
        valid1=np.isfinite(depth1), valid2=np.isfinite(depth2),
    )
    return frame, gt


def _add_noise(spec: SceneSpec, flow, flow_bwd, depth1, depth2):
    n = spec.noise
    rng = np.random.Generator(np.random.PCG64(spec.rng_seed))
    flow, flow_bwd, depth1, depth2 = flow.copy(), flow_bwd.copy(), depth1.copy(), depth2.copy()
    if n.flow_sigma_px > 0:
        flow += rng.normal(0.0, n.flow_sigma_px, flow.shape)
        flow_bwd += rng.normal(0.0, n.flow_sigma_px, flow_bwd.shape)
    if n.depth_rel_sigma > 0:
        depth1 *= 1.0 + rng.normal(0.0, n.depth_rel_sigma, depth1.shape)
        depth2 *= 1.0 + rng.normal(0.0, n.depth_rel_sigma, depth2.shape)
    if n.outlier_frac > 0:
        hit = rng.random(flow.shape[:2]) < n.outlier_frac
        flow[hit] = rng.uniform(-20.0, 20.0, (int(hit.sum()), 2))
    return flow, flow_bwd, depth1, depth2


def default_intrinsics(width: int = 128, height: int = 128) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=100.0 * width / 128, fy=100.0 * width / 128,
        cx=(width - 1) / 2, cy=(height - 1) / 2, baseline=0.5, width=width, height=height,
    )


def background_plane(depth: float = 2.5, tilt=(0.08, -0.12, 0.0)) -> Body:
    return Body("plane", SE3.from_axis_angle(tilt, (0.0, 0.0, depth)), (math.inf, math.inf))


def three_body_scene(noise: NoiseSpec | None = None, rng_seed: int = 0, size: int = 128) -> SceneSpec:
    """Static tilted background, three independently moving bodies, moving camera."""
    c1, c2, c3 = (-0.45, -0.38, 1.5), (0.5, -0.35, 1.7), (0.0, 0.48, 1.4)
    bodies = (
        background_plane(),
        Body("box", SE3.from_axis_angle((0.25, 0.3, 0.1), c1), (0.3, 0.26, 0.15),
             motion_about(c1, (0.0, 0.1, 0.05), (0.12, 0.03, -0.05))),
        Body("sphere", SE3(None, c2), (0.45,),
             motion_about(c2, (0.05, 0.0, 0.1), (-0.1, 0.08, 0.06))),
        Body("box", SE3.from_axis_angle((0.0, 0.0, 0.1), c3), (0.5, 0.2, 0.15),
             motion_about(c3, (-0.08, 0.05, 0.0), (0.05, -0.12, 0.1))),
    )
    return SceneSpec(
        default_intrinsics(size, size), bodies,
        camera_motion=SE3.from_axis_angle((0.01, -0.02, 0.005), (0.05, -0.02, 0.08)),
        noise=noise or NoiseSpec(), rng_seed=rng_seed,
    )


def two_body_scene(rel_translation=(0.0, 0.0, -0.3), noise: NoiseSpec | None = None,
                   rng_seed: int = 0, size: int = 128) -> SceneSpec:
    """Static background plane and one box translating by ``rel_translation`` (m)."""
    c = (0.0, 0.0, 1.3)
    bodies = (
        background_plane(),
        Body("box", SE3.from_axis_angle((0.2, 0.3, 0.0), c), (0.35, 0.3, 0.2),
             motion_about(c, (0.0, 0.0, 0.0), rel_translation)),
    )
    return SceneSpec(default_intrinsics(size, size), bodies, noise=noise or NoiseSpec(), rng_seed=rng_seed)


def static_scene(size: int = 64) -> SceneSpec:
    """A single static plane seen by a static camera."""
    return SceneSpec(default_intrinsics(size, size), (background_plane(),))


# --- declarative config -------------------------------------------------------

def _vec(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def scene_from_config(text: str) -> SceneSpec:
    """Parse a scene description.

    Sections: ``[camera]`` (fx fy cx cy baseline width height), optional
    ``[camera_motion]`` and ``[noise]``, ``[scene]`` (rng_seed) and one
    ``[body.<name>]`` per body with ``shape``, ``position``, ``rotation``
    (axis-angle), ``extent``, ``motion_rotation``, ``motion_translation``.
    Body motions rotate about the body position.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    cam = cp["camera"]
    K = CameraIntrinsics(
        cam.getfloat("fx"), cam.getfloat("fy"), cam.getfloat("cx"), cam.getfloat("cy"),
        cam.getfloat("baseline"), cam.getint("width"), cam.getint("height"),
    )
    cm = cp["camera_motion"] if cp.has_section("camera_motion") else {}
    camera_motion = SE3.from_axis_angle(_vec(cm.get("rotation", "0 0 0")), _vec(cm.get("translation", "0 0 0")))
    noise = NoiseSpec()
    if cp.has_section("noise"):
        ns = cp["noise"]
        noise = NoiseSpec(ns.getfloat("flow_sigma_px", 0.0), ns.getfloat("depth_rel_sigma", 0.0),
                          ns.getfloat("outlier_frac", 0.0))
    seed = cp.getint("scene", "rng_seed", fallback=0)
    bodies = []
    for name in cp.sections():
        if not name.startswith("body."):
            continue
        b = cp[name]
        pos = _vec(b.get("position", "0 0 0"))
        bodies.append(Body(
            b["shape"].strip(), SE3.from_axis_angle(_vec(b.get("rotation", "0 0 0")), pos),
            _vec(b["extent"]),
            motion_about(pos, _vec(b.get("motion_rotation", "0 0 0")), _vec(b.get("motion_translation", "0 0 0"))),
        ))
    return SceneSpec(K, tuple(bodies), camera_motion, noise, seed)


def scene_to_config(spec: SceneSpec) -> str:
    K = spec.K
    lines = [
        "[scene]", f"rng_seed = {spec.rng_seed}", "",
        "[camera]",
        *(f"{k} = {getattr(K, k)!r}" for k in ("fx", "fy", "cx", "cy", "baseline", "width", "height")),
        "",
        "[camera_motion]",
        f"rotation = {_fmt(spec.camera_motion.axis_angle())}",
        f"translation = {_fmt(spec.camera_motion.t)}", "",
        "[noise]",
        f"flow_sigma_px = {spec.noise.flow_sigma_px!r}",
        f"depth_rel_sigma = {spec.noise.depth_rel_sigma!r}",
        f"outlier_frac = {spec.noise.outlier_frac!r}", "",
    ]
    for k, b in enumerate(spec.bodies):
        c = b.pose.t
        # invert motion_about: rotation about c, residual translation
        tr = b.motion.t - (c - b.motion.R @ c)
        lines += [
            f"[body.{k}]", f"shape = {b.shape}",
            f"position = {_fmt(c)}", f"rotation = {_fmt(b.pose.axis_angle())}",
            f"extent = {_fmt(b.extent)}",
            f"motion_rotation = {_fmt(b.motion.axis_angle())}",
            f"motion_translation = {_fmt(tr)}", "",
        ]
    return "\n".join(lines)
