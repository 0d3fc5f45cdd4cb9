"""End-to-end estimation for one frame pair."""

from __future__ import annotations

import numpy as np

from .consensus import NoiseParams
from .deduction import (
    SceneResult,
    derive_odometry,
    derive_scene_flow,
    label_image,
    select_background,
)
from .errors import NoObjectError
from .preprocess import (
    DEFAULT_DEPTH_JUMP,
    DEFAULT_OCCLUSION_LIMIT,
    DEFAULT_STRIDE,
    FramePairInput,
    build_point_set,
)
from .proposal import ProposalParams
from .selection import SelectionParams, run_pipeline


def estimate(
    frame: FramePairInput,
    stride: int = DEFAULT_STRIDE,
    occl_limit_px: float = DEFAULT_OCCLUSION_LIMIT,
    noise: NoiseParams | None = None,
    proposal: ProposalParams | None = None,
    selection: SelectionParams | None = None,
    check: bool = False,
    depth_jump_rel: float | None = DEFAULT_DEPTH_JUMP,
) -> SceneResult:
    """Objects, dense labels, scene flow and odometry for one frame pair.

    Objects are extracted on the ``stride`` grid; labels and scene flow are
    then assigned at every pixel.
    """
    noise = noise or NoiseParams.for_stride(stride)
    points = build_point_set(frame, stride, occl_limit_px, depth_jump_rel)
    state = run_pipeline(points, noise, proposal, selection, check=check)
    if not state.objects:
        raise NoObjectError("no rigid object could be extracted")

    bg = select_background(state.objects, points, noise)
    full = build_point_set(frame, 1, occl_limit_px, depth_jump_rel)
    labels = label_image(state.objects, full, noise, frame.K.shape)
    depth1 = np.where(frame.mask1(), frame.depth1, np.nan)
    flow = derive_scene_flow(labels, state.objects, depth1, frame.K)
    return SceneResult(
        state.objects, labels, bg, derive_odometry(state.objects, bg), flow,
        points=points, history=state.history,
    )
