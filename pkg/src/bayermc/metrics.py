"""Segmentation quality metric and the per-component FLOPs ledger."""

from __future__ import annotations

import json

import numpy as np

from .frame_io import LabelMap

COMPONENTS = ("backbone", "fme", "mv_refine", "cabr", "prediction")


class FlopLedger:
    """Floating-point operation tallies per pipeline component.

    The prediction entry is pinned to zero: motion-compensated copying is
    pure memory movement.
    """

    def __init__(self, counts: dict | None = None):
        self._counts = {name: 0 for name in COMPONENTS}
        if counts:
            for name, value in counts.items():
                self.add(name, value)

    def add(self, component: str, flops: int) -> None:
        if component not in self._counts:
            raise ValueError(f"unknown component {component!r}; expected one of {COMPONENTS}")
        flops = int(flops)
        if flops < 0:
            raise ValueError("flop counts are non-negative")
        if component == "prediction" and flops != 0:
            raise ValueError("prediction performs no floating-point work; its entry stays 0")
        self._counts[component] += flops

    def __getitem__(self, component: str) -> int:
        return self._counts[component]

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    def as_dict(self) -> dict:
        out = dict(self._counts)
        out["total"] = self.total
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FlopLedger":
        obj = json.loads(text)
        obj.pop("total", None)
        return cls(counts=obj)

    def table(self) -> str:
        """Aligned text table of per-component GFLOPs."""
        rows = [("component", "GFLOPs")]
        for name in COMPONENTS:
            rows.append((name, f"{self._counts[name] / 1e9:.6f}"))
        rows.append(("total", f"{self.total / 1e9:.6f}"))
        width = max(len(r[0]) for r in rows) + 2
        lines = [f"{name:<{width}}{value}" for name, value in rows]
        lines.insert(1, "-" * (width + len(rows[0][1])))
        return "\n".join(lines)


def miou(pred: LabelMap, truth: LabelMap, num_classes: int | None = None,
         ignore_class: int | None = None) -> float:
    """Mean intersection-over-union across classes present in either map.

    Classes absent from both prediction and truth are excluded from the
    mean. ``ignore_class`` drops pixels whose true class matches it (void
    labels) from the tally entirely.
    """
    if (pred.width, pred.height) != (truth.width, truth.height):
        raise ValueError(
            f"dimension mismatch: pred {pred.width}x{pred.height} vs "
            f"truth {truth.width}x{truth.height}")
    if num_classes is None:
        num_classes = max(pred.num_classes, truth.num_classes)
    t = truth.classes.reshape(-1).astype(np.int64)
    p = pred.classes.reshape(-1).astype(np.int64)
    if ignore_class is not None:
        keep = t != ignore_class
        t, p = t[keep], p[keep]
    confusion = np.bincount(t * num_classes + p,
                            minlength=num_classes * num_classes)
    confusion = confusion.reshape(num_classes, num_classes)
    inter = np.diag(confusion)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    present = union > 0
    if not present.any():
        return 0.0
    ious = inter[present] / union[present]
    return float(ious.sum() / ious.size)


def ledger_report(ledger: FlopLedger, backbone_gflops_per_keyframe: float,
                  frames: int, keyframes: int) -> float:
    """Average per-frame GFLOPs for a processed sequence.

    The backbone cost is a configured constant per key frame (backbones are
    not executed here); the ledger supplies the pipeline components. Any
    backbone entry already in the ledger is ignored in favour of the
    constant so both tallying styles report the same number.
    """
    if frames <= 0:
        raise ValueError("frames must be > 0")
    if keyframes < 0 or keyframes > frames:
        raise ValueError("keyframes must be in [0, frames]")
    pipeline_flops = sum(ledger[name] for name in COMPONENTS if name != "backbone")
    total_gflops = keyframes * backbone_gflops_per_keyframe + pipeline_flops / 1e9
    return total_gflops / frames
