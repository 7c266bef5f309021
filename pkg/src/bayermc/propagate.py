"""Motion-compensated propagation of label maps.

Each final-level block copies its labels from the reference map at the
block's motion vector; out-of-bounds source coordinates clamp to the nearest
valid pixel. The whole operation is index arithmetic and memory movement,
so it contributes zero floating-point operations to the ledger.
"""

from __future__ import annotations

import numpy as np

from .fme import MotionField
from .frame_io import LabelMap


def predict_labels(ref_labels: LabelMap, fields, scale: int = 1) -> LabelMap:
    """Predict a label map by motion-compensating ``ref_labels``.

    ``fields`` is a final-level MotionField or the per-level list from
    ``estimate_motion`` (the last entry is used). ``scale`` is 2 when motion
    was estimated on packed Bayer planes, whose vectors and block geometry
    are in half-resolution units.
    """
    field = fields[-1] if isinstance(fields, (list, tuple)) else fields
    if not isinstance(field, MotionField):
        raise TypeError("fields must be a MotionField or a list of them")
    if scale not in (1, 2):
        raise ValueError("scale must be 1 or 2")
    width, height = ref_labels.width, ref_labels.height
    bsize = field.block_size * scale
    if field.grid_w * bsize < width or field.grid_h * bsize < height:
        raise ValueError(
            f"motion field covers {field.grid_w * bsize}x{field.grid_h * bsize}, "
            f"labels are {width}x{height}")

    src = ref_labels.classes
    out = np.empty((height, width), dtype=np.uint8)
    for gy in range(field.grid_h):
        y0 = gy * bsize
        if y0 >= height:
            break
        y1 = min(y0 + bsize, height)
        for gx in range(field.grid_w):
            x0 = gx * bsize
            if x0 >= width:
                break
            x1 = min(x0 + bsize, width)
            dx = int(field.mv[gy, gx, 0]) * scale
            dy = int(field.mv[gy, gx, 1]) * scale
            rows = np.clip(np.arange(y0, y1) + dy, 0, height - 1)
            cols = np.clip(np.arange(x0, x1) + dx, 0, width - 1)
            out[y0:y1, x0:x1] = src[rows[:, None], cols[None, :]]
    return LabelMap(width=width, height=height, classes=out,
                    num_classes=ref_labels.num_classes)
