"""Context-aware block refinement: forward-only CNN plus a weight-free fallback.

Flagged blocks are corrected from two inputs: the raw pixels of a patch
centred on the block (side 2K+1 for block size K), and a one-hot class patch
from the predicted label map whose central 16x16 area is zeroed, framing the
task as label inpainting. Two small conv encoders process the patches, their
features are concatenated along the channel axis, and a conv decoder with a
1x1 head emits per-pixel class logits for the central K x K block.

Training is out of scope: weights load from a flat binary file or are seeded
at random. Without weights, a deterministic fallback replaces each flagged
block by a per-pixel vote over the nearest surrounding ring pixels, keeping
the end-to-end pipeline runnable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._parallel import parallel_map
from .frame_io import Frame, LabelMap

CONTEXT_MASK = 16          # side of the zeroed central area of the context patch
_ENC_WIDTHS = (16, 32, 32)
_ENC_STRIDES = (2, 2, 1)
_DEC_WIDTH = 32
_UPSAMPLE = 4
_MAGIC_NOTE = "little-endian float32 payload"


def _require_block_size(block_size: int) -> None:
    if block_size < CONTEXT_MASK:
        raise ValueError(
            f"CaBR block size must be at least {CONTEXT_MASK}: the fixed "
            f"{CONTEXT_MASK}x{CONTEXT_MASK} context mask would cover a "
            f"{block_size}x{block_size} block entirely")


@dataclass(frozen=True, eq=False)
class CabrPatch:
    """Inputs for one flagged block: image window and masked one-hot context."""

    image: np.ndarray    # (1, 2K+1, 2K+1) float32 in [0, 1]
    context: np.ndarray  # (num_classes, 2K+1, 2K+1) float32 one-hot
    block_size: int

    def __post_init__(self):
        side = 2 * self.block_size + 1
        if self.image.shape != (1, side, side):
            raise ValueError(f"image patch must be (1, {side}, {side})")
        if self.context.ndim != 3 or self.context.shape[1:] != (side, side):
            raise ValueError(f"context patch must be (C, {side}, {side})")


def extract_patch(frame, labels: LabelMap, block_origin, block_size: int) -> CabrPatch:
    """Build the image/context patch pair for the block at ``block_origin``.

    The patch is centred on the block (origin shifted by K//2); regions
    outside the frame are edge-replicated. ``frame`` may be a Frame (luma or
    raw Bayer, both single-channel) or a 2-D array already in [0, 1].
    """
    _require_block_size(block_size)
    if isinstance(frame, Frame):
        pixels = frame.data.astype(np.float32) / np.float32(frame.max_value)
    else:
        pixels = np.asarray(frame, dtype=np.float32)
    if pixels.shape != labels.classes.shape:
        raise ValueError("frame and label map dimensions differ")
    height, width = pixels.shape
    bx, by = block_origin
    side = 2 * block_size + 1
    px = bx - block_size // 2
    py = by - block_size // 2
    rows = np.clip(np.arange(py, py + side), 0, height - 1)
    cols = np.clip(np.arange(px, px + side), 0, width - 1)
    image = pixels[rows[:, None], cols[None, :]][None]

    classes = labels.classes[rows[:, None], cols[None, :]]
    context = np.zeros((labels.num_classes, side, side), dtype=np.float32)
    ch = np.arange(labels.num_classes)[:, None, None]
    context[:] = (classes[None] == ch)
    lo = block_size - CONTEXT_MASK // 2
    context[:, lo:lo + CONTEXT_MASK, lo:lo + CONTEXT_MASK] = 0.0
    return CabrPatch(image=np.ascontiguousarray(image),
                     context=context, block_size=block_size)


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

def weight_spec(num_classes: int) -> list:
    """(name, shape) for every tensor, in canonical order."""
    spec = []
    cin = 1
    for i, (cout, _) in enumerate(zip(_ENC_WIDTHS, _ENC_STRIDES)):
        spec.append((f"img_enc.{i}.weight", (cout, cin, 3, 3)))
        spec.append((f"img_enc.{i}.bias", (cout,)))
        cin = cout
    cin = num_classes
    for i, cout in enumerate(_ENC_WIDTHS):
        spec.append((f"ctx_enc.{i}.weight", (cout, cin, 3, 3)))
        spec.append((f"ctx_enc.{i}.bias", (cout,)))
        cin = cout
    fused = 2 * _ENC_WIDTHS[-1]
    spec.append(("dec.0.weight", (_DEC_WIDTH, fused, 3, 3)))
    spec.append(("dec.0.bias", (_DEC_WIDTH,)))
    spec.append(("dec.1.weight", (_DEC_WIDTH, _DEC_WIDTH, 3, 3)))
    spec.append(("dec.1.bias", (_DEC_WIDTH,)))
    spec.append(("head.weight", (num_classes, _DEC_WIDTH, 1, 1)))
    spec.append(("head.bias", (num_classes,)))
    return spec


@dataclass(frozen=True, eq=False)
class CabrWeights:
    tensors: dict

    def __post_init__(self):
        num_classes = self.num_classes
        expected = dict(weight_spec(num_classes))
        if set(self.tensors) != set(expected):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ValueError(f"weight tensors mismatch: missing {missing}, extra {extra}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {tuple(t.shape)}")
            if t.dtype != np.float32:
                raise ValueError(f"{name}: weights must be float32")

    @property
    def num_classes(self) -> int:
        head = self.tensors.get("head.weight")
        if head is None:
            raise ValueError("missing decoder head tensor")
        return int(head.shape[0])


def random_weights(num_classes: int, seed: int = 0, scale: float = 0.05) -> CabrWeights:
    rng = np.random.default_rng(seed)
    tensors = {name: (rng.standard_normal(shape) * scale).astype(np.float32)
               for name, shape in weight_spec(num_classes)}
    return CabrWeights(tensors=tensors)


def zero_weights(num_classes: int) -> CabrWeights:
    tensors = {name: np.zeros(shape, dtype=np.float32)
               for name, shape in weight_spec(num_classes)}
    return CabrWeights(tensors=tensors)


def save_weights(weights: CabrWeights, path) -> None:
    """Write ``<header-length:u32><JSON header><raw float32 payload>``.

    The header lists {name, shape, offset} per tensor, offsets in bytes into
    the payload.
    """
    entries = []
    payload = bytearray()
    for name, _ in weight_spec(weights.num_classes):
        tensor = weights.tensors[name]
        entries.append({"name": name, "shape": list(tensor.shape),
                        "offset": len(payload)})
        payload.extend(tensor.astype("<f4").tobytes())
    header = json.dumps({"tensors": entries, "note": _MAGIC_NOTE}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_weights(path) -> CabrWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated weight file")
    (header_len,) = struct.unpack_from("<I", raw, 0)
    if 4 + header_len > len(raw):
        raise ValueError(f"{path}: header length exceeds file size")
    header = json.loads(raw[4:4 + header_len].decode("utf-8"))
    payload = raw[4 + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        end = offset + 4 * count
        if end > len(payload):
            raise ValueError(f"{path}: tensor {entry['name']} overruns the payload")
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = data.reshape(shape).astype(np.float32)
    return CabrWeights(tensors=tensors)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
            stride: int = 1, pad: int = 1) -> np.ndarray:
    # einsum with optimize=False keeps the reduction single-threaded and
    # bit-reproducible regardless of BLAS backend or caller concurrency.
    kh, kw = weight.shape[2], weight.shape[3]
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("ihwkl,oikl->ohw", windows, weight, optimize=False)
    return out + bias[:, None, None]


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _encode(x: np.ndarray, weights: CabrWeights, prefix: str) -> np.ndarray:
    for i, stride in enumerate(_ENC_STRIDES):
        x = _relu(_conv2d(x, weights.tensors[f"{prefix}.{i}.weight"],
                          weights.tensors[f"{prefix}.{i}.bias"], stride=stride))
    return x


def cabr_forward(patch: CabrPatch, weights: CabrWeights) -> np.ndarray:
    """Class logits of shape (num_classes, K, K) for the patch's block."""
    num_classes = weights.num_classes
    if patch.context.shape[0] != num_classes:
        raise ValueError(
            f"context patch has {patch.context.shape[0]} channels, "
            f"weights expect {num_classes}")
    img_feat = _encode(patch.image, weights, "img_enc")
    ctx_feat = _encode(patch.context, weights, "ctx_enc")
    fused = np.concatenate([img_feat, ctx_feat], axis=0)
    x = _relu(_conv2d(fused, weights.tensors["dec.0.weight"],
                      weights.tensors["dec.0.bias"]))
    x = np.repeat(np.repeat(x, _UPSAMPLE, axis=1), _UPSAMPLE, axis=2)
    x = _relu(_conv2d(x, weights.tensors["dec.1.weight"],
                      weights.tensors["dec.1.bias"]))
    logits = _conv2d(x, weights.tensors["head.weight"],
                     weights.tensors["head.bias"], pad=0)
    k = patch.block_size
    off = (logits.shape[1] - k) // 2
    if off < 0:
        raise ValueError("decoder output smaller than the block")
    return np.ascontiguousarray(logits[:, off:off + k, off:off + k])


# ---------------------------------------------------------------------------
# Fallback refiner and block application
# ---------------------------------------------------------------------------

def _ring_vote(classes: np.ndarray, flagged_map: np.ndarray,
               block_origin, block_size: int) -> np.ndarray:
    """Per-pixel class vote over the nearest surrounding ring pixels.

    Each block pixel considers the ring pixel straight across each of the
    four block borders (clamped at frame edges). Ring pixels that fall inside
    another flagged block are ignored when cleaner ones exist. Among the
    candidates at minimal distance the majority class wins, ties going to the
    smallest class ID.
    """
    height, width = classes.shape
    x0, y0 = block_origin
    k = block_size
    xs = np.clip(np.arange(x0, x0 + k), 0, width - 1)
    ys = np.clip(np.arange(y0, y0 + k), 0, height - 1)
    top_y = min(max(y0 - 1, 0), height - 1)
    bot_y = min(max(y0 + k, 0), height - 1)
    left_x = min(max(x0 - 1, 0), width - 1)
    right_x = min(max(x0 + k, 0), width - 1)

    cand = np.empty((4, k, k), dtype=np.int64)
    flag = np.empty((4, k, k), dtype=bool)
    cand[0] = classes[top_y, xs][None, :]
    flag[0] = flagged_map[top_y, xs][None, :]
    cand[1] = classes[bot_y, xs][None, :]
    flag[1] = flagged_map[bot_y, xs][None, :]
    cand[2] = classes[ys, left_x][:, None]
    flag[2] = flagged_map[ys, left_x][:, None]
    cand[3] = classes[ys, right_x][:, None]
    flag[3] = flagged_map[ys, right_x][:, None]

    local_y, local_x = np.mgrid[0:k, 0:k]
    dist = np.stack([local_y + 1, k - local_y, local_x + 1, k - local_x])

    has_clean = (~flag).any(axis=0)
    usable = np.where(has_clean[None], ~flag, True)
    big = 2 * k + 2
    dist_eff = np.where(usable, dist, big)
    at_min = usable & (dist_eff == dist_eff.min(axis=0, keepdims=True))

    counts = np.zeros((4, k, k), dtype=np.int64)
    for a in range(4):
        for b in range(4):
            counts[a] += (at_min[b] & (cand[b] == cand[a])).astype(np.int64)
    score = np.where(at_min, counts * 256 + (255 - cand), -1)
    best = np.argmax(score, axis=0)
    return np.take_along_axis(cand, best[None], axis=0)[0].astype(np.uint8)


def refine_blocks(frame, labels: LabelMap, blocks, block_size: int,
                  weights: CabrWeights | None = None) -> LabelMap:
    """Re-label the flagged blocks; pixels outside them are untouched.

    ``blocks`` lists pixel-coordinate block origins (x, y). With ``weights``
    the network's argmax replaces each block; without, the ring-vote fallback
    does. Blocks are processed independently from the input labels and write
    disjoint regions, so any worker count yields identical output.
    """
    blocks = [(int(x), int(y)) for x, y in blocks]
    if not blocks:
        return labels
    _require_block_size(block_size)
    width, height = labels.width, labels.height
    out = np.array(labels.classes, copy=True)

    if weights is None:
        flagged_map = np.zeros((height, width), dtype=bool)
        for bx, by in blocks:
            flagged_map[by:by + block_size, bx:bx + block_size] = True
        compute = lambda origin: _ring_vote(labels.classes, flagged_map,
                                            origin, block_size)
    else:
        if weights.num_classes != labels.num_classes:
            raise ValueError("weights and label map disagree on num_classes")

        def compute(origin):
            patch = extract_patch(frame, labels, origin, block_size)
            logits = cabr_forward(patch, weights)
            return np.argmax(logits, axis=0).astype(np.uint8)

    patches = parallel_map(compute, blocks)
    for (bx, by), block in zip(blocks, patches):
        y1 = min(by + block_size, height)
        x1 = min(bx + block_size, width)
        if y1 <= by or x1 <= bx:
            continue
        out[by:y1, bx:x1] = block[: y1 - by, : x1 - bx]
    return LabelMap(width=width, height=height, classes=out,
                    num_classes=labels.num_classes)


# ---------------------------------------------------------------------------
# FLOPs accounting
# ---------------------------------------------------------------------------

def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def layer_flops(block_size: int, num_classes: int) -> list:
    """(layer name, flops) per convolution for one forward invocation.

    Counts 2*kh*kw*Cin*Cout*Hout*Wout per convolution; activations and the
    nearest-neighbour upsample are excluded.
    """
    _require_block_size(block_size)
    side = 2 * block_size + 1
    layers = []
    size = side
    cin = 1
    for i, (cout, stride) in enumerate(zip(_ENC_WIDTHS, _ENC_STRIDES)):
        size = _conv_out(size, 3, stride, 1)
        layers.append((f"img_enc.{i}", 2 * 3 * 3 * cin * cout * size * size))
        cin = cout
    size = side
    cin = num_classes
    for i, (cout, stride) in enumerate(zip(_ENC_WIDTHS, _ENC_STRIDES)):
        size = _conv_out(size, 3, stride, 1)
        layers.append((f"ctx_enc.{i}", 2 * 3 * 3 * cin * cout * size * size))
        cin = cout
    fused = 2 * _ENC_WIDTHS[-1]
    size = _conv_out(size, 3, 1, 1)
    layers.append(("dec.0", 2 * 3 * 3 * fused * _DEC_WIDTH * size * size))
    size *= _UPSAMPLE
    size = _conv_out(size, 3, 1, 1)
    layers.append(("dec.1", 2 * 3 * 3 * _DEC_WIDTH * _DEC_WIDTH * size * size))
    layers.append(("head", 2 * 1 * 1 * _DEC_WIDTH * num_classes * size * size))
    return layers


def count_cabr_flops(block_size: int, num_classes: int, invocations: int) -> int:
    """Total flops for ``invocations`` forward passes."""
    if invocations < 0:
        raise ValueError("invocation count must be >= 0")
    per_call = sum(f for _, f in layer_flops(block_size, num_classes))
    return per_call * invocations
