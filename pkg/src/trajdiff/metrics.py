"""Trajectory-alignment scoring between target boxes and detected boxes.

Detections come from an external detector and may be missing on some frames;
a missed frame contributes IoU 0 and, for centroid distance, the distance
from the target centroid to its farthest frame corner (the worst achievable
value). All distances are normalized by the frame diagonal so 1 is the true
maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ValidationError
from .trajectory import BBox

_DIAGONAL = math.sqrt(2.0)


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _farthest_corner_distance(cx: float, cy: float) -> float:
    return max(
        math.hypot(cx - x, cy - y) for x in (0.0, 1.0) for y in (0.0, 1.0)
    )


def centroid_distance(detected: BBox | None, target: BBox) -> float:
    """Centroid separation over the frame diagonal; missed detections take
    the farthest-corner penalty."""
    tx, ty = target.center
    if detected is None:
        return _farthest_corner_distance(tx, ty) / _DIAGONAL
    dx, dy = detected.center
    return math.hypot(dx - tx, dy - ty) / _DIAGONAL


def mean_iou(detected: list[BBox | None], target: list[BBox]) -> float:
    """Mean per-frame IoU; missing frames count as 0."""
    if len(detected) != len(target):
        raise ValidationError(
            f"length mismatch: {len(detected)} detected vs {len(target)} target"
        )
    if not target:
        raise ValidationError("empty sequences")
    total = sum(0.0 if d is None else iou(d, t) for d, t in zip(detected, target))
    return total / len(target)


@dataclass
class MetricReport:
    per_frame_iou: list[float]
    mean_iou: float
    per_frame_cd: list[float]
    mean_cd: float
    missing_frames: int
    frames: int = field(default=0)

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "mean_iou": self.mean_iou,
            "mean_cd": self.mean_cd,
            "missing_frames": self.missing_frames,
            "per_frame_iou": self.per_frame_iou,
            "per_frame_cd": self.per_frame_cd,
        }


def evaluate(detected: list[BBox | None], target: list[BBox]) -> MetricReport:
    """Full per-frame and aggregate report over a box sequence pair."""
    if len(detected) != len(target):
        raise ValidationError(
            f"length mismatch: {len(detected)} detected vs {len(target)} target"
        )
    if not target:
        raise ValidationError("empty sequences")
    ious = [0.0 if d is None else iou(d, t) for d, t in zip(detected, target)]
    cds = [centroid_distance(d, t) for d, t in zip(detected, target)]
    return MetricReport(
        per_frame_iou=ious,
        mean_iou=sum(ious) / len(ious),
        per_frame_cd=cds,
        mean_cd=sum(cds) / len(cds),
        missing_frames=sum(1 for d in detected if d is None),
        frames=len(target),
    )
