"""Pipeline configuration: defaults, TOML files, and named presets.

A config file is TOML with one section per module; every key is optional
and falls back to the defaults below. The [fme] section may name a preset
and then override individual fields.

    [fme]
    preset = "standard"
    lambda = 0.1
    block_sizes = [64, 32]
    stages = [[4, 8], [2, 4], [2, 1]]       # [range, step] per stage
    split_threshold = 0.02
    sparsity_tolerance = 0.0313725
    refine_block_threshold = 0.05

    [mv_refine]
    deviation_threshold = 4

    [frame_select]
    aem_threshold = 0.15        # may be inf
    max_gop = 5                 # omit for unbounded
    statistic = "max"           # or "mean"
    reference = "previous"      # or "keyframe"

    [cabr]
    enabled = true
    weights = "cabr_weights.bin"

    [metrics]
    backbone_gflops = 399.87
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .fme import FmeConfig, SearchStage, get_preset

DEFAULT_BACKBONE_GFLOPS = 399.87


@dataclass(frozen=True)
class PipelineConfig:
    fme: FmeConfig = FmeConfig()
    deviation_threshold: int = 4
    aem_threshold: float = 0.15
    max_gop: int | None = None
    aem_statistic: str = "max"
    reference_policy: str = "previous"
    refine_enabled: bool = True
    weights_path: str | None = None
    backbone_gflops: float = DEFAULT_BACKBONE_GFLOPS


def _fme_from_section(section: dict) -> FmeConfig:
    base = get_preset(section["preset"]) if "preset" in section else FmeConfig()
    updates = {}
    if "stages" in section:
        stages = section["stages"]
        updates["stages"] = tuple(SearchStage(int(r), int(s)) for r, s in stages)
    if "lambda" in section:
        updates["lam"] = float(section["lambda"])
    if "block_sizes" in section:
        updates["block_sizes"] = tuple(int(b) for b in section["block_sizes"])
    for key in ("split_threshold", "sparsity_tolerance", "refine_block_threshold"):
        if key in section:
            updates[key] = float(section[key])
    return dataclasses.replace(base, **updates) if updates else base


def load_pipeline_config(path=None, preset: str | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an optional TOML file and/or FME preset.

    A preset argument overrides the file's [fme] section wholesale.
    """
    doc = {}
    if path is not None:
        with open(Path(path), "rb") as fh:
            doc = tomllib.load(fh)

    fme_cfg = get_preset(preset) if preset else _fme_from_section(doc.get("fme", {}))

    refine_section = doc.get("mv_refine", {})
    select = doc.get("frame_select", {})
    cabr_section = doc.get("cabr", {})
    metrics_section = doc.get("metrics", {})

    max_gop = select.get("max_gop")
    return PipelineConfig(
        fme=fme_cfg,
        deviation_threshold=int(refine_section.get("deviation_threshold", 4)),
        aem_threshold=float(select.get("aem_threshold", 0.15)),
        max_gop=int(max_gop) if max_gop is not None else None,
        aem_statistic=str(select.get("statistic", "max")),
        reference_policy=str(select.get("reference", "previous")),
        refine_enabled=bool(cabr_section.get("enabled", True)),
        weights_path=cabr_section.get("weights"),
        backbone_gflops=float(metrics_section.get("backbone_gflops",
                                                  DEFAULT_BACKBONE_GFLOPS)),
    )
