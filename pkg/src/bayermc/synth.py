"""Synthetic test sequences with exact ground truth.

Scenes are built from seeded value noise (smooth interpolated lattice noise
with a fine detail octave) rather than flat fills, so block matching has
unambiguous optima. The translating scene moves a textured square over a
static textured background with integer velocity; its label maps follow the
geometry exactly, which makes the generated sequences usable as oracles for
motion and propagation accuracy.
"""

from __future__ import annotations

import numpy as np

from .frame_io import Frame, FrameKind, LabelMap


def value_noise(width: int, height: int, seed: int, cell: int = 16,
                detail: float = 0.15) -> np.ndarray:
    """Seeded smooth noise in [0, 255] as uint8.

    Bilinear interpolation of a coarse random lattice plus a small
    per-pixel detail term; deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    gw = width // cell + 2
    gh = height // cell + 2
    lattice = rng.random((gh, gw))
    ys = np.arange(height) / cell
    xs = np.arange(width) / cell
    y0 = ys.astype(np.int64)
    x0 = xs.astype(np.int64)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = lattice[y0[:, None], x0[None, :]]
    b = lattice[y0[:, None], x0[None, :] + 1]
    c = lattice[y0[:, None] + 1, x0[None, :]]
    d = lattice[y0[:, None] + 1, x0[None, :] + 1]
    smooth = a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx
    noise = smooth * (1 - detail) + rng.random((height, width)) * detail
    return np.clip(noise * 255.0, 0, 255).astype(np.uint8)


def gen_translating_scene(width: int, height: int, frames: int, velocity,
                          seed: int = 0, square_size: int = 48,
                          start=None, fg_class: int = 1):
    """Textured square translating over a textured background.

    Returns (frames, labels); labels mark the square ``fg_class`` on a
    class-0 background and track the geometry exactly. Raises if the motion
    would push the square outside the frame.
    """
    vx, vy = int(velocity[0]), int(velocity[1])
    if frames < 1:
        raise ValueError("need at least one frame")
    if square_size >= min(width, height):
        raise ValueError("square must fit inside the frame")
    if start is None:
        sx0, sy0 = width // 4, height // 4
    else:
        sx0, sy0 = int(start[0]), int(start[1])
    for t in (0, frames - 1):
        x, y = sx0 + vx * t, sy0 + vy * t
        if x < 0 or y < 0 or x + square_size > width or y + square_size > height:
            raise ValueError(
                f"square leaves the frame at t={t}: origin ({x}, {y})")

    background = value_noise(width, height, seed)
    patch = value_noise(square_size, square_size, seed + 1, cell=8)
    # Offset the patch so foreground and background are easy to tell apart
    # even where the noise values happen to coincide.
    patch = (patch // 2 + 112).astype(np.uint8)

    out_frames, out_labels = [], []
    for t in range(frames):
        x, y = sx0 + vx * t, sy0 + vy * t
        pixels = background.copy()
        pixels[y:y + square_size, x:x + square_size] = patch
        classes = np.zeros((height, width), dtype=np.uint8)
        classes[y:y + square_size, x:x + square_size] = fg_class
        out_frames.append(Frame(width=width, height=height, data=pixels,
                                kind=FrameKind.LUMA))
        out_labels.append(LabelMap(width=width, height=height, classes=classes,
                                   num_classes=max(2, fg_class + 1)))
    return out_frames, out_labels


def gen_scene_cut(width: int, height: int, frames: int, cut_at: int,
                  seed: int = 0):
    """Two unrelated static textured scenes concatenated at ``cut_at``.

    Frames before the cut repeat texture A, the rest repeat texture B. A cut
    index at or beyond the sequence length yields a single scene.
    """
    if frames < 1:
        raise ValueError("need at least one frame")
    scene_a = value_noise(width, height, seed)
    scene_b = value_noise(width, height, seed + 1000003)
    out = []
    for t in range(frames):
        pixels = scene_a if t < cut_at else scene_b
        out.append(Frame(width=width, height=height, data=pixels.copy(),
                         kind=FrameKind.LUMA))
    return out
