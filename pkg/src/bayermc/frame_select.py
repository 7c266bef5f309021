"""Adaptive keyframe selection driven by an accumulative energy map.

The previous frame is the default motion reference. Per-block matching
energies are accumulated (at the coarsest block granularity) since the last
key frame; once the accumulated map's trigger statistic exceeds a threshold,
the current frame is promoted to a key frame and the map resets. An optional
``max_gop`` bound forces periodic key frames regardless of energy, which with
an infinite threshold reproduces fixed-GOP behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fme import MotionField


class DecisionKind(Enum):
    KEY = "key"
    NONKEY_PREV_REF = "nonkey_prev_ref"
    NONKEY_KEY_REF = "nonkey_key_ref"


@dataclass(frozen=True)
class FrameDecision:
    frame_index: int
    kind: DecisionKind
    reference_index: int | None
    trigger_statistic: float = 0.0

    def __post_init__(self):
        if self.kind is DecisionKind.KEY:
            if self.reference_index is not None:
                raise ValueError("key frames have no reference")
        else:
            if self.reference_index is None or self.reference_index >= self.frame_index:
                raise ValueError("non-key frames need an earlier reference")

    def to_json_dict(self) -> dict:
        return {
            "frame": self.frame_index,
            "kind": self.kind.value,
            "reference": self.reference_index,
            "trigger_statistic": self.trigger_statistic,
        }


@dataclass(frozen=True, eq=False)
class AemState:
    """Per-block energy sums since the last key frame, on the coarse grid."""

    accumulated: np.ndarray
    frames_since_key: int
    block_size: int

    def __post_init__(self):
        acc = np.ascontiguousarray(self.accumulated, dtype=np.float64)
        if acc.ndim != 2:
            raise ValueError("accumulated map must be 2-D")
        if self.frames_since_key < 0:
            raise ValueError("frames_since_key must be >= 0")
        acc.flags.writeable = False
        object.__setattr__(self, "accumulated", acc)

    @classmethod
    def fresh(cls, grid_w: int, grid_h: int, block_size: int) -> "AemState":
        return cls(accumulated=np.zeros((grid_h, grid_w)), frames_since_key=0,
                   block_size=block_size)


def open_gop(frame_index: int, grid_w: int, grid_h: int, block_size: int):
    """Bootstrap a sequence: the first frame is always a key frame."""
    if frame_index != 0:
        raise ValueError("open_gop only applies to frame 0")
    decision = FrameDecision(frame_index=0, kind=DecisionKind.KEY,
                             reference_index=None, trigger_statistic=0.0)
    return decision, AemState.fresh(grid_w, grid_h, block_size)


def _reduce_to_coarse(field: MotionField, state: AemState) -> np.ndarray:
    if state.block_size % field.block_size:
        raise ValueError(
            f"field block size {field.block_size} does not divide the "
            f"coarse grid block size {state.block_size}")
    factor = state.block_size // field.block_size
    gh, gw = state.accumulated.shape
    if field.grid_h != gh * factor or field.grid_w != gw * factor:
        raise ValueError(
            f"field grid {field.grid_w}x{field.grid_h} does not align with "
            f"the {gw}x{gh} accumulator grid")
    if factor == 1:
        return np.asarray(field.energy)
    return field.energy.reshape(gh, factor, gw, factor).max(axis=(1, 3))


def decide(state: AemState, field: MotionField, frame_index: int,
           aem_threshold: float = 0.15, max_gop: int | None = None,
           statistic: str = "max", reference_policy: str = "previous",
           last_key_index: int | None = None):
    """Classify the current frame and advance the accumulator.

    ``field`` must be the refined final-level result of matching the current
    frame against the previous one. Returns ``(decision, new_state)``; key
    decisions reset the accumulator.
    """
    if statistic not in ("max", "mean"):
        raise ValueError("statistic must be 'max' or 'mean'")
    if reference_policy not in ("previous", "keyframe"):
        raise ValueError("reference_policy must be 'previous' or 'keyframe'")
    accumulated = state.accumulated + _reduce_to_coarse(field, state)
    trigger = float(accumulated.max() if statistic == "max" else accumulated.mean())
    frames_since_key = state.frames_since_key + 1
    is_key = trigger > aem_threshold or (
        max_gop is not None and frames_since_key >= max_gop)

    if is_key:
        decision = FrameDecision(frame_index=frame_index, kind=DecisionKind.KEY,
                                 reference_index=None, trigger_statistic=trigger)
        new_state = AemState.fresh(state.accumulated.shape[1],
                                   state.accumulated.shape[0], state.block_size)
        return decision, new_state

    if reference_policy == "keyframe":
        if last_key_index is None:
            raise ValueError("keyframe reference policy needs last_key_index")
        kind, reference = DecisionKind.NONKEY_KEY_REF, last_key_index
    else:
        kind, reference = DecisionKind.NONKEY_PREV_REF, frame_index - 1
    decision = FrameDecision(frame_index=frame_index, kind=kind,
                             reference_index=reference, trigger_statistic=trigger)
    new_state = AemState(accumulated=accumulated, frames_since_key=frames_since_key,
                         block_size=state.block_size)
    return decision, new_state
