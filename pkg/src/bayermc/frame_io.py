"""Frame and label-map types plus file I/O.

Frames are single-channel planes: either plain luma or raw Bayer mosaic data
(one of the four 2x2 CFA phase layouts). Bayer frames can be packed into four
half-resolution planes, one per CFA site, so that block matching over the
packed stack only ever compares same-colour samples.

Supported file formats: binary PGM (P5) and single-channel PNG for frames,
8-bit gray PNG or headerless raw bytes for label maps. All round-trips are
bit-exact for 8- and 16-bit data.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image


class FrameKind(Enum):
    LUMA = "luma"
    BAYER_RGGB = "rggb"
    BAYER_BGGR = "bggr"
    BAYER_GRBG = "grbg"
    BAYER_GBRG = "gbrg"

    @property
    def is_bayer(self) -> bool:
        return self is not FrameKind.LUMA


# 2x2 tile of each CFA layout: entry (row % 2, col % 2) -> source channel index
# with channels ordered (R, G, B).
_CFA_TILES = {
    FrameKind.BAYER_RGGB: ((0, 1), (1, 2)),
    FrameKind.BAYER_BGGR: ((2, 1), (1, 0)),
    FrameKind.BAYER_GRBG: ((1, 0), (2, 1)),
    FrameKind.BAYER_GBRG: ((1, 2), (0, 1)),
}


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Frame:
    """A single-channel image plane with CFA metadata.

    ``data`` is a read-only (height, width) uint8 or uint16 array. Bayer
    kinds require even dimensions so the 2x2 CFA tile always completes.
    """

    width: int
    height: int
    data: np.ndarray
    kind: FrameKind = FrameKind.LUMA

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {self.data.shape}")
        if self.data.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.data.dtype not in (np.uint8, np.uint16):
            raise ValueError(f"frame dtype must be uint8 or uint16, got {self.data.dtype}")
        if self.kind.is_bayer and (self.width % 2 or self.height % 2):
            raise ValueError("Bayer frames require even width and height")
        object.__setattr__(self, "data", _as_readonly(self.data))

    @property
    def max_value(self) -> int:
        return int(np.iinfo(self.data.dtype).max)


@dataclass(frozen=True, eq=False)
class PackedBayer:
    """Four half-resolution planes, one per CFA site.

    Plane k holds the samples at full-resolution offsets
    (row 2y + k // 2, col 2x + k % 2), i.e. planes are ordered
    (C00, C01, C10, C11). Packing is lossless.
    """

    width_half: int
    height_half: int
    planes: tuple
    kind: FrameKind = FrameKind.BAYER_RGGB

    def __post_init__(self):
        if len(self.planes) != 4:
            raise ValueError("PackedBayer requires exactly four planes")
        for plane in self.planes:
            if plane.shape != (self.height_half, self.width_half):
                raise ValueError("all packed planes must be (height_half, width_half)")
        object.__setattr__(self, "planes", tuple(_as_readonly(p) for p in self.planes))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class IDs in [0, num_classes)."""

    width: int
    height: int
    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.classes.shape != (self.height, self.width):
            raise ValueError(
                f"classes shape {self.classes.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if self.classes.dtype != np.uint8:
            raise ValueError("label maps are stored as uint8")
        if self.num_classes < 1 or self.num_classes > 256:
            raise ValueError("num_classes must be in [1, 256]")
        if self.classes.size and int(self.classes.max()) >= self.num_classes:
            raise ValueError(
                f"class ID {int(self.classes.max())} >= num_classes {self.num_classes}"
            )
        object.__setattr__(self, "classes", _as_readonly(self.classes))


def frames_equal(a: Frame, b: Frame) -> bool:
    return (
        a.width == b.width
        and a.height == b.height
        and a.kind == b.kind
        and a.data.dtype == b.data.dtype
        and np.array_equal(a.data, b.data)
    )


# ---------------------------------------------------------------------------
# Mosaicing and CFA packing
# ---------------------------------------------------------------------------

def mosaic_rgb(r: np.ndarray, g: np.ndarray, b: np.ndarray,
               pattern: FrameKind = FrameKind.BAYER_RGGB) -> Frame:
    """Point-sample three equally sized RGB planes into a Bayer mosaic.

    Each output pixel copies exactly one source channel according to the CFA
    tile, with no filtering, so the mosaic is invertible at CFA sites.
    """
    if not pattern.is_bayer:
        raise ValueError("mosaic pattern must be a Bayer kind")
    if r.shape != g.shape or g.shape != b.shape:
        raise ValueError("R, G, B planes must have identical shapes")
    if r.ndim != 2:
        raise ValueError("channel planes must be 2-D")
    h, w = r.shape
    if h % 2 or w % 2:
        raise ValueError("mosaicing requires even dimensions")
    if r.dtype != g.dtype or g.dtype != b.dtype:
        raise ValueError("channel planes must share a dtype")
    channels = (r, g, b)
    tile = _CFA_TILES[pattern]
    out = np.empty((h, w), dtype=r.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy::2, dx::2] = channels[tile[dy][dx]][dy::2, dx::2]
    return Frame(width=w, height=h, data=out, kind=pattern)


def pack_bayer(frame: Frame) -> PackedBayer:
    """Split a Bayer frame into four half-resolution per-site planes."""
    if not frame.kind.is_bayer:
        raise ValueError("pack_bayer requires a Bayer frame, got luma")
    d = frame.data
    planes = (d[0::2, 0::2], d[0::2, 1::2], d[1::2, 0::2], d[1::2, 1::2])
    return PackedBayer(
        width_half=frame.width // 2,
        height_half=frame.height // 2,
        planes=planes,
        kind=frame.kind,
    )


def unpack_bayer(packed: PackedBayer) -> Frame:
    """Inverse of :func:`pack_bayer`."""
    h, w = packed.height_half * 2, packed.width_half * 2
    out = np.empty((h, w), dtype=packed.planes[0].dtype)
    out[0::2, 0::2] = packed.planes[0]
    out[0::2, 1::2] = packed.planes[1]
    out[1::2, 0::2] = packed.planes[2]
    out[1::2, 1::2] = packed.planes[3]
    return Frame(width=w, height=h, data=out, kind=packed.kind)


# ---------------------------------------------------------------------------
# Frame file I/O
# ---------------------------------------------------------------------------

def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # Header tokens may be interleaved with '#' comments.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval <= 0 or maxval > 65535:
        raise ValueError(f"{path}: unsupported PGM maxval {maxval}")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = width * height
    pixels = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    if pixels.size != count:
        raise ValueError(f"{path}: PGM payload shorter than header promises")
    arr = pixels.reshape(height, width)
    if maxval >= 256:
        arr = arr.astype(np.uint16)
    return np.ascontiguousarray(arr)


def _write_pgm(path: Path, arr: np.ndarray) -> None:
    maxval = int(np.iinfo(arr.dtype).max)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    payload = arr.astype(">u2").tobytes() if arr.dtype == np.uint16 else arr.tobytes()
    path.write_bytes(header + payload)


def _read_png_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img)
        else:
            raise ValueError(f"{path}: expected single channel image, got mode {img.mode}")
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected single channel image")
    if arr.dtype == np.int32:  # Pillow 'I' mode for 16-bit grayscale
        if arr.min() < 0 or arr.max() > 65535:
            raise ValueError(f"{path}: gray values outside 16-bit range")
        arr = arr.astype(np.uint16)
    return np.ascontiguousarray(arr)


def _write_png_gray(path: Path, arr: np.ndarray) -> None:
    if arr.dtype == np.uint16:
        img = Image.fromarray(arr, mode="I;16")
    else:
        img = Image.fromarray(arr, mode="L")
    img.save(path, format="PNG")


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        return fmt
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return "pgm"
    if suffix == ".png":
        return "png"
    raise ValueError(f"cannot infer format from {path}; pass format='pgm' or 'png'")


def load_frame(path, fmt: str | None = None, kind: FrameKind = FrameKind.LUMA) -> Frame:
    """Load an 8- or 16-bit single-channel image as a Frame."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "pgm":
        arr = _read_pgm(path)
    elif fmt == "png":
        arr = _read_png_gray(path)
    else:
        raise ValueError(f"unsupported frame format {fmt!r}")
    return Frame(width=arr.shape[1], height=arr.shape[0], data=arr, kind=kind)


def save_frame(frame: Frame, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _detect_format(path, fmt)
    if fmt == "pgm":
        _write_pgm(path, frame.data)
    elif fmt == "png":
        _write_png_gray(path, frame.data)
    else:
        raise ValueError(f"unsupported frame format {fmt!r}")


def load_rgb_png(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Load an RGB PNG and return its three channel planes."""
    path = Path(path)
    with Image.open(path) as img:
        if img.mode not in ("RGB", "RGBA"):
            raise ValueError(f"{path}: expected an RGB image, got mode {img.mode}")
        arr = np.asarray(img.convert("RGB"))
    return arr[:, :, 0].copy(), arr[:, :, 1].copy(), arr[:, :, 2].copy()


# ---------------------------------------------------------------------------
# Label map file I/O
# ---------------------------------------------------------------------------

def load_labels(path, fmt: str | None = None, num_classes: int | None = None,
                width: int | None = None, height: int | None = None) -> LabelMap:
    """Load a label map from gray PNG or headerless raw-u8 bytes.

    ``num_classes`` may be omitted, in which case it is inferred as
    ``max(class IDs) + 1``. Raw-u8 input additionally needs explicit
    dimensions.
    """
    path = Path(path)
    fmt = fmt or ("raw-u8" if path.suffix.lower() in (".raw", ".bin") else "png")
    if fmt == "png":
        arr = _read_png_gray(path)
        if arr.dtype != np.uint8:
            raise ValueError(f"{path}: label PNGs must be 8-bit")
    elif fmt == "raw-u8":
        if width is None or height is None:
            raise ValueError("raw-u8 labels require explicit width and height")
        data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        if data.size != width * height:
            raise ValueError(f"{path}: raw payload size does not match {width}x{height}")
        arr = data.reshape(height, width).copy()
    else:
        raise ValueError(f"unsupported label format {fmt!r}")
    if num_classes is None:
        num_classes = int(arr.max()) + 1 if arr.size else 1
    return LabelMap(width=arr.shape[1], height=arr.shape[0], classes=arr,
                    num_classes=num_classes)


def save_labels(labels: LabelMap, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("raw-u8" if path.suffix.lower() in (".raw", ".bin") else "png")
    if fmt == "png":
        _write_png_gray(path, labels.classes)
    elif fmt == "raw-u8":
        path.write_bytes(labels.classes.tobytes())
    else:
        raise ValueError(f"unsupported label format {fmt!r}")
