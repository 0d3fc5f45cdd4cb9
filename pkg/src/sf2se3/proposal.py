"""SE(3)-motion proposals from sparse rigid clusters.

A cluster starts from one uniformly drawn seed point and greedily absorbs
candidates (in random order) whose 3D distance to every current member is
preserved between the two time steps up to ``delta_rigid_dev_max``.

Randomness: every draw comes from numpy's PCG64 generator seeded through a
``SeedSequence``. Seed selection uses the entropy ``(rng_seed, stream)``, and
the candidate order of the k-th seed uses ``(rng_seed, stream, k)``, so each
cluster can be grown independently and the result does not depend on the
execution order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import RigidObject
from .errors import ClusterTooSmallError, DegenerateInputError
from .geometry import fit_se3
from .preprocess import PointSet


@dataclass(frozen=True)
class ProposalParams:
    delta_rigid_dev_max: float = 0.03
    num_clusters: int = 64
    max_cluster_size: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if not self.delta_rigid_dev_max > 0:
            raise ValueError("delta_rigid_dev_max must be positive")
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be >= 1")
        if self.max_cluster_size < 2:
            raise ValueError("max_cluster_size must be >= 2")


def make_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


def rigidity_deviation(points: PointSet, i, j) -> np.ndarray:
    """``| |p_i' - p_j'| - |p_i - p_j| |`` for index arrays (broadcasting)."""
    d1 = np.linalg.norm(points.p_t1[i] - points.p_t1[j], axis=-1)
    d2 = np.linalg.norm(points.p_t2[i] - points.p_t2[j], axis=-1)
    return np.abs(d2 - d1)


def grow_cluster(
    seed: int,
    candidates,
    points: PointSet,
    params: ProposalParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Grow a rigid cluster from ``seed``; returns member indices (seed first).

    Candidates are visited once, in a random order. A candidate joins when it
    satisfies the rigidity constraint against every member accepted so far.
    """
    if not points.reliable[seed]:
        raise ValueError("seed point needs reliable depth at both time steps")
    rng = rng if rng is not None else make_rng(params.rng_seed)
    cand = np.asarray(candidates, dtype=np.intp)
    cand = cand[(cand != seed) & points.reliable[cand]]
    cand = cand[rng.permutation(len(cand))]

    members = [seed]
    ok = np.ones(len(cand), dtype=bool)
    pos = 0
    while len(members) < params.max_cluster_size:
        # Every candidate before ``pos`` is decided; ``ok`` tracks which of the
        # remaining ones still agree with all members.
        ok[pos:] &= rigidity_deviation(points, members[-1], cand[pos:]) < params.delta_rigid_dev_max
        hits = np.flatnonzero(ok[pos:])
        if len(hits) == 0:
            break
        pos += int(hits[0])
        members.append(int(cand[pos]))
        pos += 1
    if len(members) < 2:
        raise ClusterTooSmallError("no candidate is rigid with the seed")
    return np.array(members, dtype=np.intp)


def draw_seeds(pool: np.ndarray, params: ProposalParams, stream: int) -> np.ndarray:
    rng = make_rng(params.rng_seed, stream)
    replace = len(pool) < params.num_clusters
    return rng.choice(pool, size=params.num_clusters, replace=replace)


def propose_clusters(uncovered, points: PointSet, params: ProposalParams, stream: int = 0):
    """Rigid clusters grown from seeds drawn out of ``uncovered``."""
    uncovered = np.asarray(uncovered, dtype=np.intp)
    pool = uncovered[points.reliable[uncovered]]
    if len(pool) == 0:
        return []
    clusters = []
    for k, seed in enumerate(draw_seeds(pool, params, stream)):
        try:
            clusters.append(
                grow_cluster(int(seed), pool, points, params, make_rng(params.rng_seed, stream, k))
            )
        except ClusterTooSmallError:
            continue
    return clusters


def propose_objects(uncovered, points: PointSet, params: ProposalParams, stream: int = 0) -> list[RigidObject]:
    """Motion-only objects fitted to rigid clusters; empty list when none survive."""
    proposals = []
    for members in propose_clusters(uncovered, points, params, stream):
        try:
            motion = fit_se3(points.p_t1[members], points.p_t2[members])
        except DegenerateInputError:
            continue
        proposals.append(RigidObject(motion))
    return proposals
