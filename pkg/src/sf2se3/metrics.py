"""Evaluation: KITTI-style outlier rates, matched segmentation accuracy, RPE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import DisjointSet
from scipy.optimize import linear_sum_assignment

from .errors import UndefinedMetricError
from .geometry import SE3

ABS_OUTLIER_PX = 3.0
REL_OUTLIER = 0.05
DEFAULT_FUSE_TRANSL = 0.01
DEFAULT_FUSE_ROT_DEG = 0.1


@dataclass(frozen=True)
class OutlierReport:
    d1_pct: float
    d2_pct: float
    of_pct: float
    sf_pct: float
    counts: dict

    def as_dict(self) -> dict:
        out = {"d1_pct": self.d1_pct, "d2_pct": self.d2_pct, "of_pct": self.of_pct, "sf_pct": self.sf_pct}
        out.update({f"n_{k}": v for k, v in self.counts.items()})
        return out


@dataclass(frozen=True)
class RPE:
    transl: float
    rot: float


def _is_outlier(err: np.ndarray, mag: np.ndarray) -> np.ndarray:
    # NaN errors fail both comparisons, so missing predictions count as outliers
    with np.errstate(invalid="ignore"):
        inlier = (err <= ABS_OUTLIER_PX) | (err <= REL_OUTLIER * mag)
    return ~inlier


def disparity_outliers(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return _is_outlier(np.abs(pred - gt), np.abs(gt))


def flow_outliers(pred, gt) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return _is_outlier(np.linalg.norm(pred - gt, axis=-1), np.linalg.norm(gt, axis=-1))


def _pct(outlier: np.ndarray, valid: np.ndarray, name: str) -> float:
    n = int(valid.sum())
    if n == 0:
        raise UndefinedMetricError(f"no valid pixels for {name}")
    return 100.0 * float(outlier[valid].sum()) / n


def outlier_rates(pred: dict, gt: dict, valid) -> OutlierReport:
    """Outlier percentages for keys ``d1``, ``d2`` (H x W) and ``of`` (H x W x 2).

    An error is an outlier only when it exceeds 3 px *and* 5 % of the ground
    truth magnitude. ``valid`` is one boolean mask or a mapping with a mask per
    key; scene flow is evaluated where all three are valid.
    """
    shape = np.shape(gt["d1"])
    if np.shape(pred["d1"]) != shape or np.shape(pred["d2"]) != shape or np.shape(gt["d2"]) != shape:
        raise ValueError("disparity maps must share one shape")
    if np.shape(pred["of"]) != shape + (2,) or np.shape(gt["of"]) != shape + (2,):
        raise ValueError("flow maps must be H x W x 2 matching the disparities")
    if isinstance(valid, dict):
        masks = {k: np.asarray(valid[k], dtype=bool) for k in ("d1", "d2", "of")}
    else:
        m = np.asarray(valid, dtype=bool)
        masks = {"d1": m, "d2": m, "of": m}
    masks["sf"] = masks["d1"] & masks["d2"] & masks["of"]

    out = {
        "d1": disparity_outliers(pred["d1"], gt["d1"]),
        "d2": disparity_outliers(pred["d2"], gt["d2"]),
        "of": flow_outliers(pred["of"], gt["of"]),
    }
    out["sf"] = out["d1"] | out["d2"] | out["of"]
    pct = {k: _pct(out[k], masks[k], k) for k in out}
    counts = {k: int(masks[k].sum()) for k in out}
    return OutlierReport(pct["d1"], pct["d2"], pct["of"], pct["sf"], counts)


def relative_pose_error(gt: SE3, pred: SE3, dt: float = 1.0) -> RPE:
    """Translation (m/s) and rotation (deg/s) of ``gt^-1 pred`` per unit time."""
    if not dt > 0:
        raise ValueError(f"time interval must be positive, got {dt}")
    rel = gt.inverse() @ pred
    return RPE(float(np.linalg.norm(rel.t)) / dt, math.degrees(rel.angle()) / dt)


def fuse_gt_objects(
    instances: np.ndarray,
    motions,
    delta_transl: float = DEFAULT_FUSE_TRANSL,
    delta_rot: float = DEFAULT_FUSE_ROT_DEG,
) -> np.ndarray:
    """Merge ground-truth instances whose motions are nearly identical.

    ``motions`` maps instance id to SE3 (a dict, or a list indexed by id).
    Instances whose pairwise RPE lies below both thresholds (dt = 1) are
    merged transitively. The result has contiguous ids ordered by the
    smallest original id in each group; negative ids pass through.
    """
    if not (delta_transl > 0 and delta_rot > 0):
        raise ValueError("fusion thresholds must be positive")
    instances = np.asarray(instances)
    if not isinstance(motions, dict):
        motions = dict(enumerate(motions))
    ids = sorted(int(i) for i in np.unique(instances) if i >= 0)
    missing = [i for i in ids if i not in motions]
    if missing:
        raise ValueError(f"no motion for instances {missing}")

    groups = DisjointSet(ids)
    for a_pos, a in enumerate(ids):
        for b in ids[a_pos + 1:]:
            err = relative_pose_error(motions[a], motions[b])
            if err.transl < delta_transl and err.rot < delta_rot:
                groups.merge(a, b)

    new_id: dict[int, int] = {}
    for i in ids:
        root = min(groups.subset(i))
        new_id.setdefault(root, len(new_id))
    lut = {i: new_id[min(groups.subset(i))] for i in ids}
    fused = np.full(instances.shape, -1, dtype=np.int32)
    for i, j in lut.items():
        fused[instances == i] = j
    return fused


def max_weight_matching(weights) -> tuple[np.ndarray, np.ndarray, float]:
    """One-to-one assignment maximizing the summed weight of a rectangular matrix."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp), 0.0
    rows, cols = linear_sum_assignment(w, maximize=True)
    return rows, cols, float(w[rows, cols].sum())


def segmentation_accuracy(pred, gt, valid=None, sentinel=None):
    """Percentage of valid pixels whose predicted object matches its GT object.

    Predicted and GT objects are matched one-to-one maximizing the total
    intersection. Negative labels and ``sentinel`` in ``pred`` are never
    matched but still count in the denominator. ``valid`` defaults to the
    pixels with a non-negative GT label. Returns ``(accuracy_pct, pairs)``
    where ``pairs`` lists matched ``(pred_label, gt_label)`` with nonzero
    overlap.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("label maps must have the same shape")
    valid = gt >= 0 if valid is None else np.asarray(valid, dtype=bool) & (gt >= 0)
    n = int(valid.sum())
    if n == 0:
        raise UndefinedMetricError("no valid pixels to evaluate")
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    keep = p >= 0
    if sentinel is not None:
        keep &= p != sentinel
    p, g = p[keep], g[keep]
    if len(p) == 0:
        return 0.0, []
    p_ids, p_idx = np.unique(p, return_inverse=True)
    g_ids, g_idx = np.unique(g, return_inverse=True)
    inter = np.zeros((len(p_ids), len(g_ids)))
    np.add.at(inter, (p_idx, g_idx), 1)
    rows, cols, total = max_weight_matching(inter)
    pairs = [(int(p_ids[r]), int(g_ids[c])) for r, c in zip(rows, cols) if inter[r, c] > 0]
    return 100.0 * total / n, pairs
