"""Keyframed bounding-box trajectories and their rasterized mask stacks.

A trajectory is a handful of keyframed boxes in normalized [0,1] coordinates.
This module expands keyframes to one box per frame, rasterizes boxes into
binary lattices at any resolution, and rescales masks between resolutions so
that attention layers running at coarser lattices still see the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized coordinates; x is the width axis."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0):
            raise ValidationError(f"bad x extent: [{self.x0}, {self.x1}]")
        if not (0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValidationError(f"bad y extent: [{self.y0}, {self.y1}]")

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass(frozen=True)
class TrajectorySpec:
    """Total frame count plus an ordered list of (frame_index, box) keyframes.

    The first keyframe must sit at frame 0 and the last at frame
    ``total_frames - 1`` so interpolation covers every frame.
    """

    total_frames: int
    keyframes: tuple[tuple[int, BBox], ...]

    def __post_init__(self):
        if self.total_frames < 1:
            raise ValidationError("total_frames must be >= 1")
        if not self.keyframes:
            raise ValidationError("at least one keyframe required")
        idx = [f for f, _ in self.keyframes]
        if any(b >= a for a, b in zip(idx[1:], idx)):
            raise ValidationError(f"keyframe indices must strictly increase: {idx}")
        if idx[0] != 0:
            raise ValidationError("first keyframe must be at frame 0")
        if idx[-1] != self.total_frames - 1:
            raise ValidationError(
                f"last keyframe must be at frame {self.total_frames - 1}, got {idx[-1]}"
            )


@dataclass(frozen=True)
class CellRect:
    """Inclusive rectangle of lattice cells: rows [top, top+height), cols [left, left+width)."""

    top: int
    left: int
    height: int
    width: int


class FrameMaskStack:
    """Per-frame binary masks (F, h, w), each a rasterized box rectangle."""

    def __init__(self, masks: np.ndarray):
        masks = np.asarray(masks, dtype=np.uint8)
        if masks.ndim != 3:
            raise ValidationError(f"mask stack must be 3-D, got shape {masks.shape}")
        if not np.isin(masks, (0, 1)).all():
            raise ValidationError("mask elements must be 0 or 1")
        self.masks = masks
        masks.setflags(write=False)

    @property
    def frames(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1], self.masks.shape[2]

    def flat(self, frame: int) -> np.ndarray:
        """Row-major flattened mask of one frame (the per-frame target vector)."""
        return self.masks[frame].reshape(-1)

    def extent(self, frame: int) -> CellRect | None:
        """Cell rectangle covered by the 1s of one frame, or None if empty."""
        return mask_extent(self.masks[frame])


def interpolate_boxes(spec: TrajectorySpec) -> list[BBox]:
    """Expand keyframes to one box per frame by per-coordinate linear interpolation.

    Keyframe frames reproduce their boxes exactly; frames in between blend the
    surrounding pair. Linear interpolation preserves x0 < x1 and y0 < y1, so
    every output is a valid box.
    """
    boxes: list[BBox] = [None] * spec.total_frames  # type: ignore[list-item]
    for f, box in spec.keyframes:
        boxes[f] = box
    for (f0, b0), (f1, b1) in zip(spec.keyframes, spec.keyframes[1:]):
        for f in range(f0 + 1, f1):
            u = (f - f0) / (f1 - f0)
            boxes[f] = BBox(
                b0.x0 + u * (b1.x0 - b0.x0),
                b0.y0 + u * (b1.y0 - b0.y0),
                b0.x1 + u * (b1.x1 - b0.x1),
                b0.y1 + u * (b1.y1 - b0.y1),
            )
    return boxes


def rasterize_box(box: BBox, h: int, w: int) -> np.ndarray:
    """Binary (h, w) lattice; cell (i, j) is 1 iff its center lies in the closed box."""
    if h < 1 or w < 1:
        raise ValidationError(f"lattice dims must be >= 1, got {h}x{w}")
    cx = (np.arange(w) + 0.5) / w
    cy = (np.arange(h) + 0.5) / h
    in_x = (cx >= box.x0) & (cx <= box.x1)
    in_y = (cy >= box.y0) & (cy <= box.y1)
    return (in_y[:, None] & in_x[None, :]).astype(np.uint8)


def rasterize_masks(boxes: list[BBox], h: int, w: int) -> FrameMaskStack:
    """Rasterize one box per frame into a FrameMaskStack at resolution (h, w)."""
    return FrameMaskStack(np.stack([rasterize_box(b, h, w) for b in boxes]))


def rescale_mask(mask: np.ndarray, h2: int, w2: int) -> np.ndarray:
    """Resample a binary mask to (h2, w2) with the any-overlap rule.

    An output cell is 1 iff its footprint in the source lattice overlaps any
    source 1-cell. Overlap tests use exact integer arithmetic, so a box can
    shrink but never vanish at a coarser resolution while any source cell is
    set. Monotone: adding source 1-cells never clears output cells.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {mask.shape}")
    if h2 < 1 or w2 < 1:
        raise ValidationError(f"target dims must be >= 1, got {h2}x{w2}")
    h, w = mask.shape
    if (h2, w2) == (h, w):
        return mask.astype(np.uint8).copy()
    out = np.zeros((h2, w2), dtype=np.uint8)
    # source cell r overlaps output cell I iff r*h2 < (I+1)*h and (r+1)*h2 > I*h
    rows = [
        np.flatnonzero((np.arange(h) * h2 < (i + 1) * h) & ((np.arange(h) + 1) * h2 > i * h))
        for i in range(h2)
    ]
    cols = [
        np.flatnonzero((np.arange(w) * w2 < (j + 1) * w) & ((np.arange(w) + 1) * w2 > j * w))
        for j in range(w2)
    ]
    hit = mask != 0
    for i in range(h2):
        sub = hit[rows[i]]
        for j in range(w2):
            out[i, j] = 1 if sub[:, cols[j]].any() else 0
    return out


def mask_extent(mask: np.ndarray) -> CellRect | None:
    """Bounding cell rectangle of the 1s in a mask, or None for an empty mask."""
    ys, xs = np.nonzero(np.asarray(mask))
    if ys.size == 0:
        return None
    top, left = int(ys.min()), int(xs.min())
    return CellRect(top, left, int(ys.max()) - top + 1, int(xs.max()) - left + 1)


def local_coords(rect: CellRect, i: int, j: int) -> tuple[int, int]:
    """Map a lattice cell inside ``rect`` to box-local coordinates.

    Returns (i - top, j - left), ranging over [0, height) x [0, width).
    """
    if not (rect.top <= i < rect.top + rect.height):
        raise ValidationError(f"row {i} outside rows [{rect.top}, {rect.top + rect.height})")
    if not (rect.left <= j < rect.left + rect.width):
        raise ValidationError(f"col {j} outside cols [{rect.left}, {rect.left + rect.width})")
    return i - rect.top, j - rect.left
