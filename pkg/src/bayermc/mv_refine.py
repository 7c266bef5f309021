"""Median-based outlier correction for motion vector fields.

A 3x3 window (clipped at grid borders) slides over the field; a block whose
vector strays too far from the window's component-wise median is replaced by
that median. All windows read from the input field, never from partially
updated output, so the result is independent of evaluation order.
"""

from __future__ import annotations

import numpy as np

from .fme import FmeConfig, MotionField, block_energy, flops_per_candidate, \
    to_search_planes, _pad_planes


def _window_median(values: np.ndarray) -> int:
    """Lower-middle order statistic; the true median for odd counts."""
    ordered = np.sort(values, kind="stable")
    return int(ordered[(ordered.size - 1) // 2])


def refine_mvs(field: MotionField, deviation_threshold: int = 4, *,
               cur=None, ref=None, config: FmeConfig | None = None) -> MotionField:
    """Replace outlier vectors by the 3x3 window median.

    A vector is an outlier when its Chebyshev distance to the window median
    exceeds ``deviation_threshold``. When ``cur``/``ref``/``config`` are
    supplied, energies of replaced blocks are recomputed against the
    reference so downstream consumers see consistent values; a replacement
    whose window would leave the frame keeps its previous energy.
    """
    if field.grid_w == 0 or field.grid_h == 0:
        raise ValueError("cannot refine an empty motion field")
    gh, gw = field.grid_h, field.grid_w
    mv_in = field.mv
    mv_out = np.array(mv_in, copy=True)
    replaced = []
    for gy in range(gh):
        y0, y1 = max(0, gy - 1), min(gh, gy + 2)
        for gx in range(gw):
            x0, x1 = max(0, gx - 1), min(gw, gx + 2)
            window = mv_in[y0:y1, x0:x1].reshape(-1, 2)
            med = (_window_median(window[:, 0]), _window_median(window[:, 1]))
            dev = max(abs(int(mv_in[gy, gx, 0]) - med[0]),
                      abs(int(mv_in[gy, gx, 1]) - med[1]))
            if dev > deviation_threshold:
                mv_out[gy, gx] = med
                replaced.append((gx, gy))

    energy_out = np.array(field.energy, copy=True)
    if replaced and cur is not None and ref is not None and config is not None:
        planes_c = _pad_planes(to_search_planes(cur), config.block_sizes[0])
        planes_r = _pad_planes(to_search_planes(ref), config.block_sizes[0])
        _, height, width = planes_r.shape
        bsize = field.block_size
        for gx, gy in replaced:
            ox, oy = gx * bsize, gy * bsize
            rx, ry = ox + int(mv_out[gy, gx, 0]), oy + int(mv_out[gy, gx, 1])
            if 0 <= rx <= width - bsize and 0 <= ry <= height - bsize:
                energy_out[gy, gx] = block_energy(
                    planes_c[:, oy:oy + bsize, ox:ox + bsize],
                    planes_r[:, ry:ry + bsize, rx:rx + bsize],
                    config.lam, config.sparsity_tolerance)

    return MotionField(block_size=field.block_size, grid_w=gw, grid_h=gh,
                       mv=mv_out, energy=energy_out,
                       matched=np.array(field.matched, copy=True),
                       level=field.level, candidate_evals=field.candidate_evals)


def count_replacements(before: MotionField, after: MotionField) -> int:
    return int(np.any(before.mv != after.mv, axis=2).sum())


def count_refine_flops(grid_w: int, grid_h: int, block_size: int,
                       replaced: int = 0, planes: int = 1) -> int:
    """Flop count for one refinement pass.

    Per block: 2 flops per window entry per component for the median
    extraction plus 6 for the deviation test; each replacement additionally
    recomputes one block energy.
    """
    rows = np.minimum(np.arange(grid_h) + 2, 3)
    rows = np.minimum(rows, grid_h - np.maximum(np.arange(grid_h) - 1, 0))
    cols = np.minimum(np.arange(grid_w) + 2, 3)
    cols = np.minimum(cols, grid_w - np.maximum(np.arange(grid_w) - 1, 0))
    window_entries = int(rows.sum() * cols.sum())
    median_flops = 4 * window_entries + 6 * grid_w * grid_h
    return median_flops + replaced * flops_per_candidate(block_size, planes)
