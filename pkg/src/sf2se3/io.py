"""File formats (Middlebury .flo, PFM, 16-bit PGM, TUM trajectories) and frame directories.

Frame-pair directory layout::

    calib.txt       fx, fy, cx, cy, baseline (optional), width, height as ``key = value``
    depth1.pfm      reference depth (m), non-positive or non-finite = invalid
    depth2.pfm      second depth (m)
    flow_fwd.flo    forward optical flow
    flow_bwd.flo    backward optical flow (optional)
    gt/             ground truth written by ``synth`` (optional)

Estimation output per frame pair: ``labels.pgm``, ``scene_flow.pfm``,
``objects.txt``, the predicted ``disp1.pfm``, ``disp2.pfm`` and
``flow.flo`` for evaluation, and one line appended to ``trajectory.txt``.
"""

from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import FormatError, TruncatedFileError, UnsupportedFormatError
from .geometry import SE3, CameraIntrinsics, _project, backproject
from .preprocess import FramePairInput

FLO_MAGIC = 202021.25
FLO_INVALID = 1e9
LABEL_SENTINEL = 65535

CALIB_KEYS = ("fx", "fy", "cx", "cy", "baseline", "width", "height")
# RGB-D inputs have no stereo baseline; disparity residuals then use this one
VIRTUAL_BASELINE = 0.1


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


# --- Middlebury flow ------------------------------------------------------------

def read_flow_flo(path) -> np.ndarray:
    """H x W x 2 float32 flow; components >= 1e9 in magnitude become NaN."""
    data = _read_bytes(path)
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: header truncated")
    magic, = struct.unpack("<f", data[:4])
    if magic != FLO_MAGIC:
        raise FormatError(f"{path}: bad .flo magic {magic!r}")
    w, h = struct.unpack("<ii", data[4:12])
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid size {w}x{h}")
    n = w * h * 2
    if len(data) < 12 + 4 * n:
        raise TruncatedFileError(f"{path}: expected {n} floats, file too short")
    flow = np.frombuffer(data, dtype="<f4", count=n, offset=12).reshape(h, w, 2).astype(np.float32)
    with np.errstate(invalid="ignore"):
        flow[np.abs(flow) >= FLO_INVALID] = np.nan
    return flow


def write_flow_flo(path, flow) -> None:
    """NaN entries are stored as 1e10 (the invalid marker)."""
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be H x W x 2, got {flow.shape}")
    h, w = flow.shape[:2]
    flow = np.where(np.isfinite(flow), flow, np.float32(1e10)).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_MAGIC))
        fh.write(struct.pack("<ii", w, h))
        fh.write(flow.tobytes())


# --- PFM --------------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(path) -> np.ndarray:
    """Float32 image as H x W (``Pf``) or H x W x 3 (``PF``), top row first."""
    data = _read_bytes(path)
    m = _PFM_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    kind, w, h = m.group(1), int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM scale") from exc
    if scale == 0 or w < 1 or h < 1:
        raise FormatError(f"{path}: invalid PFM header")
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(data) < m.end() + 4 * n:
        raise TruncatedFileError(f"{path}: PFM payload truncated")
    img = np.frombuffer(data, dtype=dtype, count=n, offset=m.end()).astype(np.float32)
    img = img.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.ascontiguousarray(img[::-1])


def write_pfm(path, img) -> None:
    """Little-endian PFM; 2D arrays as ``Pf``, H x W x 3 as ``PF``."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        kind = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        kind = "PF"
    else:
        raise ValueError(f"PFM needs H x W or H x W x 3, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{kind}\n{w} {h}\n-1\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())


def read_depth_pfm(path) -> np.ndarray:
    """Grayscale PFM depth in meters; invalid values (<= 0, non-finite) become NaN."""
    img = read_pfm(path)
    if img.ndim != 2:
        raise UnsupportedFormatError(f"{path}: color PFM cannot hold depth")
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(img) & (img > 0), img, np.float32(np.nan))


# --- 16-bit PGM -------------------------------------------------------------------

def write_label_pgm(path, labels) -> None:
    """Binary 16-bit big-endian PGM; negative labels are stored as 65535."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("labels must be 2D")
    if labels.size and labels.max() >= LABEL_SENTINEL:
        raise ValueError("label ids must be below 65535")
    out = np.where(labels < 0, LABEL_SENTINEL, labels).astype(">u2")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{LABEL_SENTINEL}\n".encode("ascii"))
        fh.write(out.tobytes())


_PGM_HEADER = re.compile(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_label_pgm(path) -> np.ndarray:
    """int32 labels with the 65535 sentinel mapped to -1."""
    data = _read_bytes(path)
    m = _PGM_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval < 256:
        raise UnsupportedFormatError(f"{path}: only 16-bit PGM is supported")
    if len(data) < m.end() + 2 * w * h:
        raise TruncatedFileError(f"{path}: PGM payload truncated")
    raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=m.end()).reshape(h, w)
    return np.where(raw == LABEL_SENTINEL, -1, raw.astype(np.int32)).astype(np.int32)


# --- objects and trajectories -----------------------------------------------------

def _num(v) -> str:
    return f"{float(v):.17g}"


def write_objects(path, motions, counts, background_idx) -> None:
    """One line per object: index, R (row-major), t, point count, background flag."""
    with open(path, "w") as fh:
        for k, (T, n) in enumerate(zip(motions, counts)):
            vals = [_num(v) for v in T.R.ravel()] + [_num(v) for v in T.t]
            fh.write(" ".join([str(k), *vals, str(int(n)), str(int(k == background_idx))]) + "\n")


def read_objects(path):
    """``(motions, counts, background_idx)``; background is -1 when none is flagged."""
    motions, counts, bg = [], [], -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 15:
                raise FormatError(f"{path}:{lineno}: expected 15 fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts[1:13]]
                n, flag = int(parts[13]), int(parts[14])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            motions.append(SE3(np.reshape(vals[:9], (3, 3)), vals[9:]))
            counts.append(n)
            if flag:
                bg = len(motions) - 1
    return motions, counts, bg


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
    q = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    return -q if q[3] < 0 else q


def tum_line(timestamp: float, T: SE3) -> str:
    q = rotation_to_quaternion(T.R)
    return " ".join(_num(v) for v in (timestamp, *T.t, *q))


def append_trajectory(path, timestamp: float, T: SE3) -> None:
    with open(path, "a") as fh:
        fh.write(tum_line(timestamp, T) + "\n")


def read_trajectory(path) -> list[tuple[float, SE3]]:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError(f"{path}:{lineno}: TUM lines have 8 fields")
            v = [float(p) for p in parts]
            poses.append((v[0], SE3(Rotation.from_quat(v[4:8]).as_matrix(), v[1:4])))
    return poses


# --- calibration and frame directories -------------------------------------------------

def write_calib(path, K: CameraIntrinsics) -> None:
    with open(path, "w") as fh:
        for k in CALIB_KEYS:
            v = getattr(K, k)
            fh.write(f"{k} = {v if isinstance(v, int) else _num(v)}\n")


def read_calib(path) -> CameraIntrinsics:
    vals = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{path}:{lineno}: expected key = value")
            vals[key.strip()] = value.strip()
    vals.setdefault("baseline", repr(VIRTUAL_BASELINE))
    missing = [k for k in CALIB_KEYS if k not in vals]
    if missing:
        raise FormatError(f"{path}: missing calibration keys {missing}")
    try:
        return CameraIntrinsics(
            *(float(vals[k]) for k in CALIB_KEYS[:5]), int(vals["width"]), int(vals["height"])
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def is_frame_dir(path) -> bool:
    return (Path(path) / "calib.txt").is_file()


def read_frame_pair(path) -> FramePairInput:
    path = Path(path)
    K = read_calib(path / "calib.txt")
    depth1 = read_depth_pfm(path / "depth1.pfm").astype(np.float64)
    depth2 = read_depth_pfm(path / "depth2.pfm").astype(np.float64)
    flow = read_flow_flo(path / "flow_fwd.flo").astype(np.float64)
    bwd_path = path / "flow_bwd.flo"
    flow_bwd = read_flow_flo(bwd_path).astype(np.float64) if bwd_path.exists() else None
    if depth1.shape != K.shape:
        raise FormatError(f"{path}: depth1 is {depth1.shape}, calibration says {K.shape}")
    return FramePairInput(K, depth1, depth2, flow, flow_bwd)


def write_frame_pair(path, frame: FramePairInput) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_calib(path / "calib.txt", frame.K)
    write_pfm(path / "depth1.pfm", np.where(frame.mask1(), frame.depth1, np.nan))
    write_pfm(path / "depth2.pfm", np.where(frame.mask2(), frame.depth2, np.nan))
    write_flow_flo(path / "flow_fwd.flo", frame.flow_fwd)
    if frame.flow_bwd is not None:
        write_flow_flo(path / "flow_bwd.flo", frame.flow_bwd)


def write_ground_truth(path, gt) -> None:
    """Ground truth of a rendered scene: labels, disparities, flow, motions."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_label_pgm(path / "instances.pgm", gt.instances)
    write_label_pgm(path / "occluded.pgm", gt.occluded.astype(np.int32))
    write_pfm(path / "disp1.pfm", gt.disp1)
    write_pfm(path / "disp2.pfm", gt.disp2)
    write_flow_flo(path / "flow.flo", gt.flow)
    write_pfm(path / "scene_flow.pfm", gt.scene_flow)
    counts = [int((gt.instances == k).sum()) for k in range(len(gt.body_motions))]
    write_objects(path / "objects.txt", gt.body_motions, counts, -1)
    traj = path / "trajectory.txt"
    traj.unlink(missing_ok=True)
    append_trajectory(traj, 0.0, gt.camera_motion)


def read_ground_truth(path) -> dict:
    path = Path(path)
    motions, _, _ = read_objects(path / "objects.txt")
    return {
        "instances": read_label_pgm(path / "instances.pgm"),
        "disp1": read_pfm(path / "disp1.pfm").astype(np.float64),
        "disp2": read_pfm(path / "disp2.pfm").astype(np.float64),
        "flow": read_flow_flo(path / "flow.flo").astype(np.float64),
        "motions": motions,
        "camera_motion": read_trajectory(path / "trajectory.txt")[0][1],
    }


# --- estimation results ----------------------------------------------------------

def predicted_maps(result, depth1: np.ndarray, K: CameraIntrinsics):
    """Disparity at both times and optical flow implied by the scene flow."""
    H, W = K.shape
    Y, X = np.mgrid[0:H, 0:W].astype(np.float64)
    ok = np.isfinite(depth1) & (depth1 > 0)
    p1 = np.full((H, W, 3), np.nan)
    p1[ok] = backproject(X[ok], Y[ok], depth1[ok], K)
    p2 = p1 + result.scene_flow
    with np.errstate(divide="ignore", invalid="ignore"):
        u, v, d2 = _project(p2, K)
        d1 = K.fb / np.where(ok, depth1, np.nan)
    ahead = p2[..., 2] > 0
    flow = np.stack([u - X, v - Y], axis=-1)
    flow[~ahead] = np.nan
    return d1, np.where(ahead, d2, np.nan), flow


def write_result_files(result, out_dir, depth1: np.ndarray, K: CameraIntrinsics) -> None:
    """Per-frame result files; ``depth1`` is the reference depth used for the predictions."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"{out_dir} is not writable")
    write_label_pgm(out_dir / "labels.pgm", result.labels)
    write_pfm(out_dir / "scene_flow.pfm", result.scene_flow)
    counts = [len(o.cloud) for o in result.objects]
    write_objects(out_dir / "objects.txt", [o.motion for o in result.objects], counts, result.background_idx)
    d1, d2, flow = predicted_maps(result, depth1, K)
    write_pfm(out_dir / "disp1.pfm", d1)
    write_pfm(out_dir / "disp2.pfm", d2)
    write_flow_flo(out_dir / "flow.flo", flow)


def write_outputs(result, out_dir, depth1: np.ndarray, K: CameraIntrinsics,
                  trajectory=None, timestamp: float = 0.0) -> None:
    """Result files plus the odometry appended to ``trajectory`` (default ``out_dir/trajectory.txt``)."""
    write_result_files(result, out_dir, depth1, K)
    append_trajectory(trajectory or Path(out_dir) / "trajectory.txt", timestamp, result.odometry)


def write_point_set(path, points) -> None:
    cols = ("x", "y", "z", "u", "v", "d", "r_t1", "r_t2")
    data = np.stack([getattr(points, c).astype(np.float64) for c in cols], axis=1)
    np.savetxt(path, data, fmt="%.17g", header=" ".join(cols))


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("# iteration proposals contribution max_overlap components R(9) t(3)\n")
        for rec in history:
            motion = rec.motion
            vals = [] if motion is None else [_num(v) for v in (*motion.R.ravel(), *motion.t)]
            fh.write(" ".join([str(rec.iteration), str(rec.num_proposals), _num(rec.contribution),
                               _num(rec.max_overlap), str(rec.num_components), *vals]) + "\n")
