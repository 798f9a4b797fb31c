"""Pipeline configuration and its key=value text file format.

A config file is plain text, one `key = value` per line, `#` comments and
blank lines ignored.  Keys match the PipelineConfig field names; values are
parsed by the field's type.  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class PipelineConfig:
    # over-segmentation
    oversegment_k: int = 30
    oversegment_weight: float = 0.5
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-6
    # residual smoothing / segregation
    smoothing_sigma_px: float = 3.0
    # background warp / match
    warp_depth_m: float = 1.0
    match_radius_px: float = 2.0
    match_threshold: float = 0.5
    # translation direction estimation
    svm_c: float = 1.0
    svm_iterations: int = 500
    svm_min_samples: int = 50
    svm_min_agreement: float = 0.6
    # persistent background map
    ema_alpha_min: float = 0.05
    ema_alpha_max: float = 0.5
    # merging
    merge_threshold: float = -0.15
    merge_lambda_r: float = 0.5
    merge_bg_penalty: float = 1.0
    merge_bbox_dilation_px: float = 2.0
    bg_like_threshold: float = 0.5
    tikhonov_lambda: float = 1e-6
    # tracking
    tracker_q: float = 1.0
    tracker_r: float = 4.0
    tracker_gate_px: float = 30.0
    tracker_t_miss: int = 3
    # pipeline
    slice_duration_s: float = 0.025
    init_frames: int = 2
    min_segment_events: int = 20
    fov_limit: float = 3.0
    seed: int = 0

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = known[key]
            values[key] = int(val) if kind in (int, "int") else float(val)
        return cls(**values)

    def to_file(self, path) -> None:
        lines = [f"{f.name} = {getattr(self, f.name)!r}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")
