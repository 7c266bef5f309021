"""Sequence driver: motion estimation, frame selection, propagation, refinement.

Frames are processed in order (the temporal dependency is inherent); within a
frame the per-block stages use the package's deterministic parallel maps.
Key-frame results are injected from caller-supplied label maps, standing in
for a segmentation backbone whose cost enters the ledger as a configured
constant.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cabr import CabrWeights, count_cabr_flops, refine_blocks
from .config import PipelineConfig
from .fme import count_fme_flops, estimate_motion, mv_scale
from .frame_io import Frame, LabelMap
from .frame_select import AemState, DecisionKind, FrameDecision, decide, open_gop
from .metrics import FlopLedger
from .mv_refine import count_refine_flops, count_replacements, refine_mvs
from .propagate import predict_labels

CABR_MIN_BLOCK = 16


class MissingKeyLabels(RuntimeError):
    def __init__(self, frame_index: int):
        super().__init__(
            f"frame {frame_index} was declared a key frame but no label map "
            f"is available for it")
        self.frame_index = frame_index


@dataclass(frozen=True)
class RunResult:
    labels: list
    decisions: list
    ledger: FlopLedger
    scale: int

    @property
    def keyframes(self) -> int:
        return sum(1 for d in self.decisions if d.kind is DecisionKind.KEY)


def _plane_geometry(frame: Frame, config: PipelineConfig):
    scale = mv_scale(frame)
    plane_w = frame.width // scale
    plane_h = frame.height // scale
    coarse = config.fme.block_sizes[0]
    grid_w = -(-plane_w // coarse)
    grid_h = -(-plane_h // coarse)
    return scale, grid_w, grid_h


def run_sequence(frames, key_labels, config: PipelineConfig = PipelineConfig(),
                 weights: CabrWeights | None = None) -> RunResult:
    """Run the full pipeline over an in-memory frame sequence.

    ``key_labels`` maps frame index -> LabelMap (a dict or callable); it is
    consulted exactly once per key frame and missing entries abort with
    :class:`MissingKeyLabels`. Returns the per-frame output label maps, the
    decision log, and the flop ledger.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("empty frame sequence")
    lookup = key_labels if callable(key_labels) else \
        (lambda i: key_labels[i])

    scale, grid_w, grid_h = _plane_geometry(frames[0], config)
    final_block = config.fme.block_sizes[-1] * scale
    if config.refine_enabled and final_block < CABR_MIN_BLOCK:
        raise ValueError(
            f"CaBR block size must be at least {CABR_MIN_BLOCK}: the finest "
            f"FME level yields {final_block}-pixel blocks; disable refinement "
            f"or use larger blocks")
    planes = 4 if scale == 2 else 1
    backbone_flops = round(config.backbone_gflops * 1e9)

    ledger = FlopLedger()
    decisions = []
    outputs = []
    state: AemState | None = None
    last_key = 0

    def inject_key(index: int) -> LabelMap:
        try:
            labels = lookup(index)
        except (KeyError, IndexError, FileNotFoundError):
            raise MissingKeyLabels(index) from None
        if labels is None:
            raise MissingKeyLabels(index)
        ledger.add("backbone", backbone_flops)
        return labels

    for i, frame in enumerate(frames):
        if i == 0:
            decision, state = open_gop(0, grid_w, grid_h, config.fme.block_sizes[0])
            labels = inject_key(0)
        else:
            if config.reference_policy == "keyframe":
                ref_index = last_key
            else:
                ref_index = i - 1
            ref_frame = frames[ref_index]
            fields = estimate_motion(frame, ref_frame, config.fme)
            ledger.add("fme", count_fme_flops(
                (frame.width, frame.height), config.fme,
                [f.candidate_evals for f in fields], planes))
            final = fields[-1]
            refined = refine_mvs(final, config.deviation_threshold,
                                 cur=frame, ref=ref_frame, config=config.fme)
            ledger.add("mv_refine", count_refine_flops(
                final.grid_w, final.grid_h, final.block_size,
                count_replacements(final, refined), planes))
            decision, state = decide(
                state, refined, i,
                aem_threshold=config.aem_threshold, max_gop=config.max_gop,
                statistic=config.aem_statistic,
                reference_policy=config.reference_policy,
                last_key_index=last_key)
            if decision.kind is DecisionKind.KEY:
                labels = inject_key(i)
            else:
                labels = predict_labels(outputs[ref_index], refined, scale)
                ledger.add("prediction", 0)
                if config.refine_enabled:
                    block = refined.block_size * scale
                    origins = [(gx * block, gy * block)
                               for gx, gy in refined.refinement_blocks()]
                    labels = refine_blocks(frame, labels, origins, block, weights)
                    if weights is not None:
                        ledger.add("cabr", count_cabr_flops(
                            block, labels.num_classes, len(origins)))
        if decision.kind is DecisionKind.KEY:
            last_key = i
        decisions.append(decision)
        outputs.append(labels)
    return RunResult(labels=outputs, decisions=decisions, ledger=ledger,
                     scale=scale)
