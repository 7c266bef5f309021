"""Fast hierarchical block-matching motion estimation.

The search runs three chained stages per block (coarse, intermediate, fine),
each a square candidate grid centred on the previous stage's best match. The
matching criterion blends normalized SAD with the sparsity of the thresholded
difference map. Blocks whose best energy stays above the split threshold are
partitioned into four half-size children and re-searched at the next
hierarchy level; at the finest level, high-energy blocks are flagged for
downstream refinement instead.

Luma frames are searched at full resolution. Bayer frames are first packed
into four half-resolution CFA-site planes and the search runs on the plane
stack, which keeps every candidate displacement phase-safe; the resulting
motion vectors are therefore in half-resolution units (scale x2 when applied
to full-resolution maps).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._parallel import parallel_map
from .frame_io import Frame, pack_bayer

DEFAULT_SPARSITY_TOLERANCE = 8.0 / 255.0
DEFAULT_SPLIT_THRESHOLD = 0.02
DEFAULT_REFINE_THRESHOLD = 0.05


@dataclass(frozen=True)
class SearchStage:
    """One search stage: ``range`` grid steps per direction of ``step`` pixels."""

    range: int
    step: int

    def __post_init__(self):
        if self.range < 0:
            raise ValueError("search range must be >= 0")
        if self.step < 1:
            raise ValueError("search step must be >= 1")


@dataclass(frozen=True)
class FmeConfig:
    stages: tuple = (SearchStage(4, 8), SearchStage(2, 4), SearchStage(2, 1))
    lam: float = 0.1
    block_sizes: tuple = (64, 32)
    split_threshold: float = DEFAULT_SPLIT_THRESHOLD
    sparsity_tolerance: float = DEFAULT_SPARSITY_TOLERANCE
    refine_block_threshold: float = DEFAULT_REFINE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "block_sizes", tuple(self.block_sizes))
        if len(self.stages) != 3:
            raise ValueError("FME uses exactly three search stages")
        if not self.block_sizes:
            raise ValueError("block_sizes must not be empty")
        for size in self.block_sizes:
            if size < 8 or size & (size - 1):
                raise ValueError(f"block size {size} must be a power of two >= 8")
        for parent, child in zip(self.block_sizes, self.block_sizes[1:]):
            if child * 2 != parent:
                raise ValueError("each level splits blocks in four: sizes must halve")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda weight must be in [0, 1]")
        for name in ("split_threshold", "sparsity_tolerance", "refine_block_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _preset(coarse, intermediate, fine, lam, blocks) -> FmeConfig:
    return FmeConfig(
        stages=(SearchStage(*coarse), SearchStage(*intermediate), SearchStage(*fine)),
        lam=lam,
        block_sizes=tuple(blocks),
    )


# Named parameter sets: "standard" plus the seven ablation variants.
PRESETS = {
    "standard": _preset((4, 8), (2, 4), (2, 1), 0.1, (64, 32)),
    "mode1": _preset((6, 8), (4, 4), (4, 1), 0.1, (64, 32)),
    "mode2": _preset((10, 8), (6, 4), (4, 4), 0.1, (64, 32)),
    "mode3": _preset((4, 8), (2, 4), (2, 1), 0.1, (32,)),
    "mode4": _preset((4, 8), (2, 4), (2, 1), 0.1, (64, 32, 16, 8)),
    "mode5": _preset((4, 16), (2, 4), (2, 1), 0.1, (64, 32)),
    "mode6": _preset((4, 8), (2, 4), (2, 1), 0.5, (64, 32)),
    "mode7": _preset((4, 8), (2, 4), (2, 1), 0.8, (64, 32)),
}


def get_preset(name: str) -> FmeConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-block motion vectors, energies and match mask at one hierarchy level.

    ``mv`` holds integer (dx, dy) displacements from each current block to its
    match in the reference frame, in search-plane pixel units. ``matched`` is
    False for blocks that were split (non-final levels) or flagged for
    refinement (final level). ``candidate_evals`` counts the candidate blocks
    actually evaluated while building this level.
    """

    block_size: int
    grid_w: int
    grid_h: int
    mv: np.ndarray
    energy: np.ndarray
    matched: np.ndarray
    level: int = 0
    candidate_evals: int = 0

    def __post_init__(self):
        shape = (self.grid_h, self.grid_w)
        if self.mv.shape != shape + (2,):
            raise ValueError("mv must have shape (grid_h, grid_w, 2)")
        if self.energy.shape != shape or self.matched.shape != shape:
            raise ValueError("energy and matched must have shape (grid_h, grid_w)")
        for name, arr in (("mv", self.mv), ("energy", self.energy), ("matched", self.matched)):
            out = np.ascontiguousarray(arr)
            out.flags.writeable = False
            object.__setattr__(self, name, out)

    def refinement_blocks(self) -> list:
        """Grid coordinates (gx, gy) of blocks flagged for refinement."""
        ys, xs = np.nonzero(~self.matched)
        return [(int(x), int(y)) for y, x in zip(ys, xs)]

    def to_json_dict(self) -> dict:
        return {
            "block_size": self.block_size,
            "grid_w": self.grid_w,
            "grid_h": self.grid_h,
            "mv": [[int(dx), int(dy)] for dx, dy in self.mv.reshape(-1, 2)],
            "energy": [float(e) for e in self.energy.reshape(-1)],
            "matched": [bool(m) for m in self.matched.reshape(-1)],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MotionField":
        gw, gh = int(obj["grid_w"]), int(obj["grid_h"])
        mv = np.asarray(obj["mv"], dtype=np.int64).reshape(gh, gw, 2)
        energy = np.asarray(obj["energy"], dtype=np.float64).reshape(gh, gw)
        matched = np.asarray(obj["matched"], dtype=bool).reshape(gh, gw)
        return cls(block_size=int(obj["block_size"]), grid_w=gw, grid_h=gh,
                   mv=mv, energy=energy, matched=matched)


def save_motion_field(field_or_fields, path) -> None:
    """Write the final-level field (plus all levels) as JSON."""
    fields = list(field_or_fields) if isinstance(field_or_fields, (list, tuple)) \
        else [field_or_fields]
    obj = fields[-1].to_json_dict()
    obj["levels"] = [f.to_json_dict() for f in fields]
    Path(path).write_text(json.dumps(obj, indent=1), encoding="utf-8")


def load_motion_field(path) -> MotionField:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return MotionField.from_json_dict(obj)


# ---------------------------------------------------------------------------
# Search-plane representation
# ---------------------------------------------------------------------------

def to_search_planes(frame) -> np.ndarray:
    """Normalized (planes, H, W) float stack the matcher operates on.

    Luma frames become a single full-resolution plane; Bayer frames become
    the four packed CFA-site planes at half resolution. Intensities are
    scaled to [0, 1] by the dtype's maximum so both energy terms share units.
    """
    if isinstance(frame, np.ndarray):
        arr = np.asarray(frame, dtype=np.float64)
        return arr[None] if arr.ndim == 2 else arr
    scale = float(frame.max_value)
    if frame.kind.is_bayer:
        packed = pack_bayer(frame)
        return np.stack([p.astype(np.float64) / scale for p in packed.planes])
    return frame.data.astype(np.float64)[None] / scale


def mv_scale(frame) -> int:
    """Factor mapping search-plane units to full-resolution pixels."""
    if isinstance(frame, Frame) and frame.kind.is_bayer:
        return 2
    return 1


def _pad_planes(planes: np.ndarray, multiple: int) -> np.ndarray:
    _, h, w = planes.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return planes
    return np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode="edge")


# ---------------------------------------------------------------------------
# Energy and candidate search
# ---------------------------------------------------------------------------

def block_energy(cur_block, ref_block, lam: float,
                 sparsity_tolerance: float = DEFAULT_SPARSITY_TOLERANCE) -> float:
    """Matching energy of a block pair: (1-lam)*SAD + lam*sparsity.

    Both terms are normalized by the sample count, so the result is in [0, 1]
    for intensities in [0, 1] and is zero iff the blocks are identical.
    """
    a = np.asarray(cur_block, dtype=np.float64)
    b = np.asarray(ref_block, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"block shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    n = diff.size
    sad_norm = diff.sum() / n
    sparsity = int((diff > sparsity_tolerance).sum()) / n
    return float((1.0 - lam) * sad_norm + lam * sparsity)


def _stage_candidates(planes_r, cur_block, origin, bsize, center, rng, step, lam, tol):
    """Evaluate one stage's candidate grid; returns (mv, energy, n_evals) or None.

    Candidates are scanned dy-major then dx (canonical order); the first
    minimum wins, making ties deterministic. Candidates whose reference
    window leaves the frame are skipped; returns None if none is valid.
    """
    _, height, width = planes_r.shape
    ox, oy = origin
    offsets = np.arange(-rng, rng + 1, dtype=np.int64) * step
    dxs = center[0] + offsets
    dys = center[1] + offsets
    ys = oy + dys
    xs = ox + dxs
    valid_y = (ys >= 0) & (ys <= height - bsize)
    valid_x = (xs >= 0) & (xs <= width - bsize)
    jj, ii = np.meshgrid(np.arange(dys.size), np.arange(dxs.size), indexing="ij")
    valid = valid_y[jj] & valid_x[ii]
    if not valid.any():
        return None
    sel_j = jj[valid]
    sel_i = ii[valid]
    view = sliding_window_view(planes_r, (bsize, bsize), axis=(1, 2))
    windows = view[:, ys[sel_j], xs[sel_i]]          # (P, N, b, b)
    windows = np.ascontiguousarray(windows.transpose(1, 0, 2, 3))
    diff = np.abs(windows - cur_block[None])
    n = cur_block.size
    sad = diff.sum(axis=(1, 2, 3))
    cnt = (diff > tol).sum(axis=(1, 2, 3))
    energies = (1.0 - lam) * (sad / n) + lam * (cnt / n)
    k = int(np.argmin(energies))
    mv = (int(dxs[sel_i[k]]), int(dys[sel_j[k]]))
    return mv, float(energies[k]), int(energies.size)


def search_stage(cur, ref, block_origin, block_size: int, center,
                 search_range: int, step: int, config: FmeConfig):
    """Best candidate of a single search stage for one block.

    ``cur``/``ref`` may be Frames or (planes, H, W) stacks; ``block_origin``
    and ``center`` are in search-plane coordinates. Raises if the block or
    every candidate window lies outside the frame.
    """
    planes_c = to_search_planes(cur)
    planes_r = to_search_planes(ref)
    _, height, width = planes_c.shape
    ox, oy = block_origin
    if ox < 0 or oy < 0 or ox + block_size > width or oy + block_size > height:
        raise ValueError(f"block at {block_origin} size {block_size} lies outside the frame")
    cur_block = np.ascontiguousarray(planes_c[:, oy:oy + block_size, ox:ox + block_size])
    result = _stage_candidates(planes_r, cur_block, (ox, oy), block_size,
                               tuple(center), search_range, step,
                               config.lam, config.sparsity_tolerance)
    if result is None:
        raise ValueError("all candidate windows fall outside the reference frame")
    return result[0], result[1]


def _search_block(planes_c, planes_r, origin, bsize, start_mv, config):
    """Run the three chained stages for one block.

    If a stage's whole candidate grid is out of frame (possible for border
    blocks with a large inherited start vector), that stage is re-centred on
    zero displacement, which always yields a valid candidate.
    """
    ox, oy = origin
    cur_block = np.ascontiguousarray(planes_c[:, oy:oy + bsize, ox:ox + bsize])
    mv = tuple(start_mv)
    energy = 0.0
    evals = 0
    for stage in config.stages:
        result = _stage_candidates(planes_r, cur_block, origin, bsize, mv,
                                   stage.range, stage.step,
                                   config.lam, config.sparsity_tolerance)
        if result is None:
            result = _stage_candidates(planes_r, cur_block, origin, bsize, (0, 0),
                                       stage.range, stage.step,
                                       config.lam, config.sparsity_tolerance)
        mv, energy, n = result
        evals += n
    return mv, energy, evals


def _expand2(arr: np.ndarray) -> np.ndarray:
    """Replicate each grid entry across a 2x2 grid of children."""
    return np.repeat(np.repeat(arr, 2, axis=0), 2, axis=1)


def estimate_motion(cur, ref, config: FmeConfig = FmeConfig()) -> list:
    """Hierarchical motion estimation; returns one MotionField per level.

    Frames must share size and kind. Planes are edge-padded to a multiple of
    the coarsest block size; blocks that lie entirely inside the padding are
    never flagged for refinement. Per-block searches are independent, so the
    result is identical for any worker count.
    """
    if isinstance(cur, Frame) and isinstance(ref, Frame):
        if cur.kind != ref.kind:
            raise ValueError(f"frame kind mismatch: {cur.kind} vs {ref.kind}")
        if (cur.width, cur.height) != (ref.width, ref.height):
            raise ValueError("frame size mismatch")
    planes_c = to_search_planes(cur)
    planes_r = to_search_planes(ref)
    if planes_c.shape != planes_r.shape:
        raise ValueError("frame size mismatch")
    real_h, real_w = planes_c.shape[1:]
    coarse = config.block_sizes[0]
    planes_c = _pad_planes(planes_c, coarse)
    planes_r = _pad_planes(planes_r, coarse)
    height, width = planes_c.shape[1:]

    fields = []
    parent = None
    n_levels = len(config.block_sizes)
    for level, bsize in enumerate(config.block_sizes):
        grid_h, grid_w = height // bsize, width // bsize
        if parent is None:
            mv = np.zeros((grid_h, grid_w, 2), dtype=np.int64)
            energy = np.zeros((grid_h, grid_w), dtype=np.float64)
            inherited = np.zeros((grid_h, grid_w), dtype=bool)
        else:
            mv = _expand2(parent.mv)
            energy = _expand2(parent.energy)
            inherited = _expand2(parent.matched)

        todo = [(gx, gy) for gy in range(grid_h) for gx in range(grid_w)
                if not inherited[gy, gx]]
        results = parallel_map(
            lambda cell: _search_block(planes_c, planes_r,
                                       (cell[0] * bsize, cell[1] * bsize),
                                       bsize, tuple(mv[cell[1], cell[0]]), config),
            todo,
        )
        evals = 0
        for (gx, gy), (best_mv, best_energy, n) in zip(todo, results):
            mv[gy, gx] = best_mv
            energy[gy, gx] = best_energy
            evals += n

        final = level == n_levels - 1
        matched = inherited.copy()
        if final:
            # Unmatched at the last level means flagged for refinement; blocks
            # wholly inside the edge padding are exempt.
            xs = np.arange(grid_w) * bsize
            ys = np.arange(grid_h) * bsize
            in_real = (ys[:, None] < real_h) & (xs[None, :] < real_w)
            flagged = ~inherited & (energy > config.refine_block_threshold) & in_real
            matched = ~flagged
        else:
            matched[~inherited] = energy[~inherited] <= config.split_threshold

        parent = MotionField(block_size=bsize, grid_w=grid_w, grid_h=grid_h,
                             mv=mv, energy=energy, matched=matched,
                             level=level, candidate_evals=evals)
        fields.append(parent)
    return fields


# ---------------------------------------------------------------------------
# FLOPs accounting
# ---------------------------------------------------------------------------

def flops_per_candidate(block_size: int, planes: int = 1) -> int:
    """Cost of one candidate check: 2 flops/sample for the absolute difference
    and accumulate, 1 flop/sample for the sparsity comparison, plus 3 to
    combine the two terms."""
    samples = planes * block_size * block_size
    return 3 * samples + 3


def count_fme_flops(frame_dims, config: FmeConfig, evaluations, planes: int = 1) -> int:
    """Flop count for the candidate evaluations actually performed.

    ``evaluations`` is either a total count (all at the coarsest block size)
    or a per-level sequence aligned with ``config.block_sizes``.
    """
    if isinstance(evaluations, (int, np.integer)):
        per_level = [int(evaluations)] + [0] * (len(config.block_sizes) - 1)
    else:
        per_level = [int(e) for e in evaluations]
        if len(per_level) != len(config.block_sizes):
            raise ValueError("need one evaluation count per hierarchy level")
    total = 0
    for bsize, n in zip(config.block_sizes, per_level):
        total += n * flops_per_candidate(bsize, planes)
    return total


def full_search(cur, ref, block_origin, block_size: int, radius: int, config: FmeConfig):
    """Exhaustive search over [-radius, radius]^2 in canonical scan order.

    Provided as a slow reference for validation; equivalent to a single
    stage with step 1 and range ``radius``.
    """
    return search_stage(cur, ref, block_origin, block_size, (0, 0), radius, 1, config)
