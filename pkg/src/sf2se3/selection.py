"""Proposal selection as a maximum-coverage problem, and the outer loop.

Per iteration the proposal with the largest contribution probability is
accepted, provided it adds at least ``delta_contrib_min`` of coverage and
overlaps no previous object by more than ``delta_overlap_max``. Its motion
inliers are then split into spatially connected clouds, each becoming one
object. The loop ends when no proposal qualifies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .consensus import (
    NoiseParams,
    RigidObject,
    joint_inlier_prob,
    motion_inlier_prob,
    point_to_point_spatial_prob,
)
from .errors import DegenerateInputError, EmptyPointSetError
from .geometry import SE3, fit_se3
from .preprocess import PointSet
from .proposal import ProposalParams, propose_objects

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionParams:
    delta_contrib_min: float = 0.02
    delta_overlap_max: float = 0.5
    max_objects: int = 20
    connectivity_prob_min: float = 0.05
    min_component_size: int = 4
    # points with coverage below this seed new proposals
    uncovered_max: float = 0.5
    # motion inlier probability needed to enter a selected object's cloud
    inlier_prob_min: float = 0.05
    knn: int = 8
    # refit each split component on its own inliers
    refit_components: bool = True

    def __post_init__(self):
        for name in ("delta_contrib_min", "delta_overlap_max", "connectivity_prob_min",
                     "uncovered_max", "inlier_prob_min"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.max_objects < 1:
            raise ValueError("max_objects must be >= 1")
        if self.min_component_size < 1 or self.knn < 1:
            raise ValueError("min_component_size and knn must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    num_proposals: int
    motion: SE3 | None = None
    contribution: float = 0.0
    max_overlap: float = 0.0
    num_components: int = 0


@dataclass
class CoverageState:
    best_cover: np.ndarray
    objects: list[RigidObject] = field(default_factory=list)
    object_probs: list[np.ndarray] = field(default_factory=list)
    history: list[IterationRecord] = field(default_factory=list)

    @classmethod
    def empty(cls, n: int) -> "CoverageState":
        return cls(np.zeros(n))

    def add(self, obj: RigidObject, prob: np.ndarray) -> None:
        self.objects.append(obj)
        self.object_probs.append(prob)
        self.best_cover = np.maximum(self.best_cover, prob)


@dataclass(frozen=True)
class Selection:
    index: int
    proposal: RigidObject
    contribution: float
    overlaps: np.ndarray


def coverage_prob(points: PointSet, obj: RigidObject, params: NoiseParams) -> np.ndarray:
    """Joint inlier probability, or motion-only while ``obj`` has no cloud."""
    if obj.has_cloud:
        return joint_inlier_prob(points, obj, params)
    return motion_inlier_prob(points, obj, params)


def contribution_from_probs(p: np.ndarray, best_cover: np.ndarray) -> float:
    return float(np.mean(np.maximum(p - best_cover, 0.0)))


def overlap_from_probs(p1: np.ndarray, p2: np.ndarray) -> float:
    """Soft intersection over union; 0 when both supports are empty."""
    inter = p1 * p2
    union = float(np.sum(p1 + p2 - inter))
    return float(np.sum(inter)) / union if union > 0 else 0.0


def contribution_prob(points: PointSet, obj: RigidObject, state: CoverageState, params: NoiseParams) -> float:
    return contribution_from_probs(motion_inlier_prob(points, obj, params), state.best_cover)


def overlap_prob(points: PointSet, obj1: RigidObject, obj2: RigidObject, params: NoiseParams) -> float:
    return overlap_from_probs(coverage_prob(points, obj1, params), coverage_prob(points, obj2, params))


def select_object(
    proposals,
    points: PointSet,
    state: CoverageState,
    sel_params: SelectionParams,
    noise_params: NoiseParams,
) -> Selection | None:
    """Best admissible proposal, or ``None`` when none meets both constraints."""
    best = None
    for k, prop in enumerate(proposals):
        p = motion_inlier_prob(points, prop, noise_params)
        contrib = contribution_from_probs(p, state.best_cover)
        if contrib < sel_params.delta_contrib_min:
            continue
        if best is not None and contrib <= best.contribution:
            continue
        overlaps = np.array([overlap_from_probs(p, q) for q in state.object_probs])
        if overlaps.size and overlaps.max() > sel_params.delta_overlap_max:
            continue
        best = Selection(k, prop, contrib, overlaps)
    return best


def split_connected(cloud_pts: np.ndarray, noise_params: NoiseParams, sel_params: SelectionParams):
    """Connected components of ``(x, y, z)`` rows under the spatial point-to-point model.

    Edges join each point to its ``knn`` nearest pixel neighbours whose
    spatial inlier probability reaches ``connectivity_prob_min``. Returns index
    arrays ordered by their smallest member.
    """
    n = len(cloud_pts)
    if n == 0:
        return []
    k = min(sel_params.knn + 1, n)
    _, nbr = cKDTree(cloud_pts[:, :2]).query(cloud_pts[:, :2], k=k)
    nbr = np.asarray(nbr).reshape(n, k)
    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    prob = point_to_point_spatial_prob(cloud_pts[rows], cloud_pts[cols], noise_params)
    edge = prob >= sel_params.connectivity_prob_min
    graph = coo_matrix((np.ones(int(edge.sum())), (rows[edge], cols[edge])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    comps: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        comps.setdefault(int(lab), []).append(i)
    return [np.array(c, dtype=np.intp) for c in comps.values()]


def refit_motion(motion: SE3, idx: np.ndarray, points: PointSet, noise_params: NoiseParams,
                 rounds: int = 3, trim: float = 3.0) -> SE3:
    """Weighted least-squares motion of ``idx``, reweighted by inlier probability.

    Each round also drops points whose 3D residual exceeds ``trim`` times the
    median one; depth sampled across a discontinuity passes the disparity test
    but lands far off the surface. Falls back to the previous estimate when a
    fit is degenerate.
    """
    idx = idx[points.r_t2[idx]]
    if len(idx) < 3:
        return motion
    sub = points.subset(idx)
    for _ in range(rounds):
        w = motion_inlier_prob(sub, RigidObject(motion), noise_params)
        err = np.linalg.norm(motion.apply(sub.p_t1) - sub.p_t2, axis=1)
        w = np.where(err <= trim * np.median(err), w, 0.0)
        try:
            motion = fit_se3(sub.p_t1, sub.p_t2, w)
        except DegenerateInputError:
            break
    return motion


def collect_inliers_and_split(
    selected: RigidObject,
    points: PointSet,
    noise_params: NoiseParams,
    sel_params: SelectionParams,
) -> list[RigidObject]:
    """Objects formed from the spatially connected parts of the motion inliers.

    Only points with reliable reference depth can enter a cloud. An empty
    list means the selection is discarded.
    """
    p = motion_inlier_prob(points, selected, noise_params)
    inliers = np.flatnonzero((p >= sel_params.inlier_prob_min) & points.r_t1)
    if len(inliers) == 0:
        return []
    cloud = np.stack([points.x[inliers], points.y[inliers], points.z[inliers]], axis=1)
    objects = []
    for comp in split_connected(cloud, noise_params, sel_params):
        if len(comp) < sel_params.min_component_size:
            continue
        motion = selected.motion
        if sel_params.refit_components:
            motion = refit_motion(motion, inliers[comp], points, noise_params)
        objects.append(RigidObject(motion, cloud[comp]))
    return objects


def run_pipeline(
    points: PointSet,
    noise_params: NoiseParams | None = None,
    proposal_params: ProposalParams | None = None,
    sel_params: SelectionParams | None = None,
    check: bool = True,
) -> CoverageState:
    """Iterate propose / select / split until no proposal qualifies.

    At most ``sel_params.max_objects`` iterations run and at most that many
    objects are kept. With ``check`` set, the selection constraints and the
    monotone coverage are asserted every iteration.
    """
    if len(points) == 0:
        raise EmptyPointSetError("empty point set")
    noise_params = noise_params or NoiseParams.for_stride(points.stride)
    proposal_params = proposal_params or ProposalParams()
    sel_params = sel_params or SelectionParams()

    state = CoverageState.empty(len(points))
    for it in range(sel_params.max_objects):
        if len(state.objects) >= sel_params.max_objects:
            break
        uncovered = np.flatnonzero(state.best_cover < sel_params.uncovered_max)
        proposals = propose_objects(uncovered, points, proposal_params, stream=it)
        record = IterationRecord(it, len(proposals))
        state.history.append(record)
        if not proposals:
            log.debug("iteration %d: no proposals", it)
            break
        sel = select_object(proposals, points, state, sel_params, noise_params)
        if sel is None:
            log.debug("iteration %d: no admissible proposal", it)
            break
        if check:
            assert sel.contribution >= sel_params.delta_contrib_min
            assert np.all(sel.overlaps <= sel_params.delta_overlap_max)
        record.motion = sel.proposal.motion
        record.contribution = sel.contribution
        record.max_overlap = float(sel.overlaps.max()) if sel.overlaps.size else 0.0

        before = state.best_cover
        accepted = []
        for obj in collect_inliers_and_split(sel.proposal, points, noise_params, sel_params):
            # The minimum contribution holds per object, so components that
            # only re-cover explained points are dropped.
            prob = joint_inlier_prob(points, obj, noise_params)
            if contribution_from_probs(prob, before) >= sel_params.delta_contrib_min:
                accepted.append((obj, prob))
        accepted = accepted[: sel_params.max_objects - len(state.objects)]
        record.num_components = len(accepted)
        for obj, prob in accepted:
            state.add(obj, prob)
        if check:
            assert np.all(state.best_cover >= before)
        log.debug("iteration %d: contribution %.4f, %d components", it, sel.contribution, len(accepted))
    return state
