"""Face boxes, landmark sets, and the mouth-crop geometry.

All operations here are pure and stateless; detector/mesh backends that
produce the inputs live in :mod:`yawnforge.backends`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from .errors import BackendError, ConfigError, DegenerateLipExtentError, InputImageError

MESH_POINT_COUNT = 468


def load_lip_indices(path: str | None = None) -> list[int]:
    """Lip-contour indices into the 468-point face mesh (outer + inner lips).

    Shipped as a JSON data file so the subset is auditable and replaceable
    without touching code.
    """
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = json.loads(
            resources.files("yawnforge").joinpath("data/lip_indices.json").read_text("utf-8")
        )
    indices = data["lip_indices"]
    if not indices or any(not (0 <= i < MESH_POINT_COUNT) for i in indices):
        raise ConfigError("lip index list must be non-empty and within the mesh range")
    return list(indices)


_LIP_INDICES: list[int] | None = None


def lip_indices() -> list[int]:
    global _LIP_INDICES
    if _LIP_INDICES is None:
        _LIP_INDICES = load_lip_indices()
    return _LIP_INDICES


@dataclass(frozen=True)
class FaceBox:
    """Axis-aligned face detection, corner coordinates with x0 < x1, y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float
    score: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {(self.x0, self.y0, self.x1, self.y1)}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def dilated(self, fraction: float) -> "FaceBox":
        dx = (self.x1 - self.x0) * fraction
        dy = (self.y1 - self.y0) * fraction
        return FaceBox(self.x0 - dx, self.y0 - dy, self.x1 + dx, self.y1 + dy, self.score)


def iou(a: FaceBox, b: FaceBox) -> float:
    """Intersection-over-union of two boxes."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(boxes: Sequence[FaceBox], iou_threshold: float) -> list[FaceBox]:
    """Greedy non-maximum suppression.

    Boxes are visited in descending score order (ties broken by smaller input
    index, which makes the result deterministic); a box is kept iff its IoU
    with every already kept box is below the threshold.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) < iou_threshold for j in kept):
            kept.append(i)
    return [boxes[i] for i in kept]


def select_primary_face(boxes: Sequence[FaceBox]) -> Optional[FaceBox]:
    """The largest-area box; ties go to the higher score, then to coordinates.

    The full tie-break chain makes the choice independent of input order.
    """
    if not boxes:
        return None
    return min(boxes, key=lambda b: (-b.area, -b.score, b.x0, b.y0, b.x1, b.y1))


@dataclass(frozen=True)
class LandmarkSet:
    """468 face-mesh points in frame pixel coordinates (x, y, relative z)."""

    points: np.ndarray
    face_box: Optional[FaceBox] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (MESH_POINT_COUNT, 3):
            raise BackendError(
                f"expected {MESH_POINT_COUNT} (x, y, z) landmarks, got shape {pts.shape}"
            )
        if not np.isfinite(pts[:, :2]).all():
            raise BackendError("landmark x/y coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def lip_points(self, indices: Sequence[int] | None = None) -> np.ndarray:
        idx = list(indices) if indices is not None else lip_indices()
        return self.points[idx, :2]


@dataclass(frozen=True)
class MouthBox:
    """Integer pixel mouth crop box derived from lip extrema plus a margin."""

    x0: int
    y0: int
    x1: int
    y1: int
    margin_px: int = 10

    def __post_init__(self):
        if self.margin_px < 0:
            raise ValueError("margin_px must be non-negative")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate mouth box {(self.x0, self.y0, self.x1, self.y1)}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def mouth_bbox(
    landmarks: LandmarkSet,
    margin_px: int = 10,
    frame_w: int = 0,
    frame_h: int = 0,
    indices: Sequence[int] | None = None,
) -> MouthBox:
    """Expanded mouth bounding box from the extremal lip landmark coordinates.

    Fractional landmark coordinates are kept until the final rounding:
    floor on the minima, ceil on the maxima, then the margin is applied in
    raw pixels and the result clamped to the frame rectangle ([0, w] x [0, h]
    with corner semantics, so a box may touch the far edge).
    """
    if margin_px < 0:
        raise ValueError("margin_px must be non-negative")
    if frame_w <= 0 or frame_h <= 0:
        raise ValueError("frame_w and frame_h must be positive")
    pts = landmarks.lip_points(indices)
    min_x, min_y = pts.min(axis=0)
    max_x, max_y = pts.max(axis=0)
    if max_x - min_x <= 0 or max_y - min_y <= 0:
        raise DegenerateLipExtentError(
            f"lip extent degenerate: x spread {max_x - min_x}, y spread {max_y - min_y}"
        )
    x0 = max(0, min(int(math.floor(min_x)) - margin_px, frame_w - 1))
    y0 = max(0, min(int(math.floor(min_y)) - margin_px, frame_h - 1))
    x1 = max(0, min(int(math.ceil(max_x)) + margin_px, frame_w))
    y1 = max(0, min(int(math.ceil(max_y)) + margin_px, frame_h))
    if x0 >= x1 or y0 >= y1:
        raise DegenerateLipExtentError(
            f"mouth box collapsed after clamping to {frame_w}x{frame_h}"
        )
    return MouthBox(x0=x0, y0=y0, x1=x1, y1=y1, margin_px=margin_px)


def crop_image(frame: np.ndarray, box: MouthBox) -> np.ndarray:
    """Extract the mouth crop pixels; raises if the crop would be empty."""
    if frame is None or frame.size == 0:
        raise InputImageError("cannot crop an empty frame")
    crop = frame[box.y0:box.y1, box.x0:box.x1]
    if crop.size == 0:
        raise InputImageError(f"crop {box.as_tuple()} has zero area within the frame")
    return crop
