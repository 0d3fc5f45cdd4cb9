"""Quick checks against independently derived values, run by ``sf2se3 selftest``."""

from __future__ import annotations

import itertools
import math
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import io
from .consensus import gauss_inlier_prob
from .geometry import SE3, fit_se3, random_rotation
from .metrics import fuse_gt_objects, max_weight_matching, relative_pose_error
from .preprocess import warp_depth_backward
from .selection import contribution_from_probs, overlap_from_probs

# two-sided normal tail masses, computed with mpmath at 30 digits
TAIL_1SIGMA = 0.317310507862914102829534908736
TAIL_3SIGMA = 0.00269979606326018905330362953519


def check_gauss_tails():
    p = gauss_inlier_prob(np.array([0.0, 2.0, 6.0]), 0.0, 4.0)
    err = max(abs(p[0] - 1.0), abs(p[1] - TAIL_1SIGMA), abs(p[2] - TAIL_3SIGMA))
    return err <= 1e-12, f"max error {err:.2e}"


def check_se3_fit(trials: int = 200):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(trials):
        T = SE3(random_rotation(rng), rng.normal(size=3))
        src = rng.normal(size=(6, 3))
        est = fit_se3(src, T.apply(src))
        worst = max(worst, np.linalg.norm(est.R - T.R), np.linalg.norm(est.t - T.t))
    return worst <= 1e-9, f"worst error {worst:.2e}"


def check_overlap_contribution():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        a, b, c = rng.random((3, 50))
        inter = sum(x * y for x, y in zip(a, b))
        union = sum(x + y - x * y for x, y in zip(a, b))
        contrib = sum(max(x - z, 0.0) for x, z in zip(a, c)) / len(a)
        worst = max(worst, abs(overlap_from_probs(a, b) - inter / union),
                    abs(contribution_from_probs(a, c) - contrib))
    return worst <= 1e-12, f"worst error {worst:.2e}"


def check_matching():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n, m = rng.integers(1, 6, size=2)
        w = rng.integers(0, 20, size=(n, m)).astype(float)
        if n > m:
            w = w.T
        brute = max(sum(w[i, c] for i, c in enumerate(cols))
                    for cols in itertools.permutations(range(w.shape[1]), w.shape[0]))
        if max_weight_matching(w)[2] != brute:
            return False, f"mismatch on {w.tolist()}"
    return True, "50 matrices"


def check_rpe():
    gt = SE3.from_axis_angle((0.1, -0.2, 0.3), (1.0, 2.0, 3.0))
    pred = gt @ SE3.from_axis_angle((0.0, 0.0, math.radians(10.0)), (0.1, 0.0, 0.0))
    e = relative_pose_error(gt, pred, 0.5)
    err = max(abs(e.rot - 20.0), abs(e.transl - 0.2))
    return err <= 1e-9, f"error {err:.2e}"


def check_quaternion():
    q = io.rotation_to_quaternion(SE3.from_axis_angle((0.0, 0.0, math.pi / 2)).R)
    h = math.sqrt(0.5)
    err = float(np.max(np.abs(q - [0.0, 0.0, h, h])))
    return err <= 1e-12, f"error {err:.2e}"


def check_flo_bytes():
    raw = struct.pack("<f", 202021.25) + struct.pack("<ii", 2, 1) + struct.pack("<4f", 1.5, -2.0, 0.25, 3.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "f.flo"
        path.write_bytes(raw)
        flow = io.read_flow_flo(path)
    ok = flow.shape == (1, 2, 2) and flow[0].tolist() == [[1.5, -2.0], [0.25, 3.0]]
    return ok, f"decoded {flow.reshape(-1).tolist()}"


def check_pfm_row_order():
    # rows stored bottom-to-top: the first stored row is the image's last row
    raw = b"Pf\n2 2\n-1\n" + struct.pack("<4f", 3.0, 4.0, 1.0, 2.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.pfm"
        path.write_bytes(raw)
        img = io.read_pfm(path)
    return img.tolist() == [[1.0, 2.0], [3.0, 4.0]], f"decoded {img.tolist()}"


def check_warp_ramp():
    H, W = 4, 6
    depth2 = np.tile(np.arange(W, dtype=float) + 1.0, (H, 1))
    flow = np.zeros((H, W, 2))
    flow[..., 0] = 1.0
    warped = warp_depth_backward(depth2, flow)
    ok = np.allclose(warped[:, : W - 1], depth2[:, : W - 1] + 1.0) and np.all(np.isnan(warped[:, W - 1]))
    return ok, "ramp shifted by one pixel"


def check_fusion():
    A = SE3.from_axis_angle((0.0, 0.1, 0.0), (0.5, 0.0, 0.0))
    B = SE3.from_axis_angle((0.0, 0.0, 0.0), (0.0, 0.3, 0.0))
    inst = np.array([[0, 1], [2, 3]])
    fused = fuse_gt_objects(inst, [A, A, B, B])
    return fused.tolist() == [[0, 0], [1, 1]], f"fused {fused.tolist()}"


CHECKS = {
    "gaussian tail probabilities": check_gauss_tails,
    "se3 fit on noiseless correspondences": check_se3_fit,
    "overlap and contribution sums": check_overlap_contribution,
    "matching vs permutation brute force": check_matching,
    "relative pose error of 10 deg / 0.1 m": check_rpe,
    "quaternion of 90 deg about z": check_quaternion,
    "handcrafted .flo bytes": check_flo_bytes,
    "pfm bottom-to-top rows": check_pfm_row_order,
    "backward warp of a depth ramp": check_warp_ramp,
    "fusion of motions A A B B": check_fusion,
}


def run_all():
    """``[(name, passed, detail)]`` for every check; exceptions count as failures."""
    results = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
