"""Pluggable detector / mesh / classifier backends and the ops that drive them.

A detector backend turns a frame into scored face boxes; a mesh backend turns
a frame plus a face box into 468 landmarks; a classifier turns a mouth crop
into a label with confidence. Everything downstream only sees these three
adapter interfaces, so tests and the bundled synthetic corpora run against
deterministic implementations while real corpora can plug in heavyweight
models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .errors import BackendError, ConfigError, InputImageError
from .geometry import FaceBox, LandmarkSet, MESH_POINT_COUNT, nms

# Class order everywhere: model outputs, score tuples, export class ids.
LABELS = ("yawn", "no_yawn")


@dataclass(frozen=True)
class Prediction:
    """Binary mouth-state prediction with softmax scores."""

    label: str
    scores: tuple[float, float]
    confidence: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unexpected label {self.label!r}")


class FaceDetector(Protocol):
    def detect(self, frame: np.ndarray, *, frame_id: str | None = None) -> list[FaceBox]:
        """Raw scored boxes for one frame, before thresholding and NMS."""
        ...


class MeshProvider(Protocol):
    def extract(
        self, frame: np.ndarray, face: FaceBox, *, frame_id: str | None = None
    ) -> Optional[np.ndarray]:
        """(468, 3) landmark array in frame pixel coordinates, or None on failure."""
        ...


class MouthClassifier(Protocol):
    def classify(self, crop: np.ndarray) -> Prediction:
        ...


@dataclass(frozen=True)
class DetectorConfig:
    """Face detection knobs: score threshold, NMS overlap, backend selection."""

    confidence_threshold: float = 0.5
    nms_iou_threshold: float = 0.45
    backend_id: str = "synthetic"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.confidence_threshold < 1.0):
            raise ConfigError(
                f"confidence_threshold must be in (0, 1), got {self.confidence_threshold}"
            )
        if not (0.0 < self.nms_iou_threshold < 1.0):
            raise ConfigError(
                f"nms_iou_threshold must be in (0, 1), got {self.nms_iou_threshold}"
            )


_DETECTOR_FACTORIES: dict[str, Callable[..., FaceDetector]] = {}
_MESH_FACTORIES: dict[str, Callable[..., MeshProvider]] = {}


def register_detector(backend_id: str):
    def wrap(factory):
        _DETECTOR_FACTORIES[backend_id] = factory
        return factory
    return wrap


def register_mesh(backend_id: str):
    def wrap(factory):
        _MESH_FACTORIES[backend_id] = factory
        return factory
    return wrap


def _load_bundled_backends() -> None:
    # the truth-file backends live in fixtures and register on import
    from . import fixtures  # noqa: F401


def create_detector(cfg: DetectorConfig) -> FaceDetector:
    factory = _DETECTOR_FACTORIES.get(cfg.backend_id)
    if factory is None:
        _load_bundled_backends()
        factory = _DETECTOR_FACTORIES.get(cfg.backend_id)
    if factory is None:
        raise ConfigError(
            f"no face detector registered under {cfg.backend_id!r}; "
            f"available: {sorted(_DETECTOR_FACTORIES)}"
        )
    return factory(**cfg.options)


def create_mesh(backend_id: str, options: dict | None = None) -> MeshProvider:
    factory = _MESH_FACTORIES.get(backend_id)
    if factory is None:
        _load_bundled_backends()
        factory = _MESH_FACTORIES.get(backend_id)
    if factory is None:
        raise ConfigError(
            f"no mesh provider registered under {backend_id!r}; "
            f"available: {sorted(_MESH_FACTORIES)}"
        )
    return factory(**(options or {}))


def detect_faces(
    frame: np.ndarray,
    cfg: DetectorConfig,
    detector: FaceDetector | None = None,
    frame_id: str | None = None,
) -> list[FaceBox]:
    """Detect faces: backend call, score threshold, NMS, descending-score order."""
    if frame is None or frame.size == 0:
        raise InputImageError("cannot run face detection on an empty frame")
    if detector is None:
        detector = create_detector(cfg)
    raw = detector.detect(frame, frame_id=frame_id)
    scored = [b for b in raw if b.score >= cfg.confidence_threshold]
    survivors = nms(scored, cfg.nms_iou_threshold)
    return sorted(survivors, key=lambda b: (-b.score, b.x0, b.y0))


def extract_landmarks(
    frame: np.ndarray,
    face: FaceBox,
    backend: MeshProvider,
    frame_id: str | None = None,
) -> Optional[LandmarkSet]:
    """Run the mesh backend; per-frame failures become None, never a crash."""
    try:
        pts = backend.extract(frame, face, frame_id=frame_id)
    except Exception:
        return None
    if pts is None:
        return None
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape != (MESH_POINT_COUNT, 3):
        # Wrong topology is a misconfigured backend, not a bad frame.
        raise BackendError(
            f"mesh backend returned shape {pts.shape}, expected ({MESH_POINT_COUNT}, 3)"
        )
    return LandmarkSet(points=pts, face_box=face)


@register_detector("static")
class StaticDetector:
    """Returns a programmed box list regardless of the frame. Test stub."""

    def __init__(self, boxes: Sequence[dict | FaceBox] = ()):
        self.boxes = [
            b if isinstance(b, FaceBox) else FaceBox(**b) for b in boxes
        ]

    def detect(self, frame, *, frame_id=None):
        return list(self.boxes)


@register_detector("none")
class NullDetector:
    """Never finds a face; exercises the no-face path."""

    def detect(self, frame, *, frame_id=None):
        return []


@register_mesh("none")
class NullMesh:
    """Always fails to converge."""

    def extract(self, frame, face, *, frame_id=None):
        return None


@register_detector("synthetic")
class SyntheticFaceDetector:
    """Color-blob detector for the bundled synthetic corpora.

    Finds the largest connected region whose color sits inside the fixture
    skin-tone band and scores it by how well the region fills its bounding
    box (an ellipse fills ~pi/4 of it).
    """

    def __init__(self, lo=(105, 135, 175), hi=(185, 215, 255), min_area_px: int = 400):
        self.lo = np.array(lo, dtype=np.uint8)  # BGR
        self.hi = np.array(hi, dtype=np.uint8)
        self.min_area_px = min_area_px

    def detect(self, frame, *, frame_id=None):
        import cv2

        if frame.ndim == 2:
            frame = cv2.cvtColor(frame, cv2.COLOR_GRAY2BGR)
        mask = cv2.inRange(frame, self.lo, self.hi)
        n, labels, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
        boxes = []
        for i in range(1, n):
            x, y, w, h, area = stats[i]
            if area < self.min_area_px or w < 2 or h < 2:
                continue
            fill = float(area) / float(w * h)
            score = max(0.5, min(0.99, fill + 0.2))
            boxes.append(FaceBox(float(x), float(y), float(x + w), float(y + h), score))
        return boxes


@register_mesh("mediapipe")
class MediapipeMesh:
    """468-point face mesh adapter; optional dependency, not bundled."""

    def __init__(self, **options):
        try:
            import mediapipe as mp
        except ImportError as exc:
            raise ConfigError(
                "the 'mediapipe' mesh backend requires the mediapipe package; "
                "install it or use the 'fixture' backend for synthetic corpora"
            ) from exc
        self._mesh = mp.solutions.face_mesh.FaceMesh(
            static_image_mode=True, max_num_faces=1, refine_landmarks=False, **options
        )  # pragma: no cover

    def extract(self, frame, face, *, frame_id=None):  # pragma: no cover
        import cv2

        h, w = frame.shape[:2]
        rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
        result = self._mesh.process(rgb)
        if not result.multi_face_landmarks:
            return None
        lms = result.multi_face_landmarks[0].landmark[:MESH_POINT_COUNT]
        return np.array([[p.x * w, p.y * h, p.z] for p in lms], dtype=np.float64)


@register_detector("cascade")
class CascadeFaceDetector:
    """Haar-cascade adapter; needs a cascade XML (not bundled with headless cv2)."""

    def __init__(self, cascade_path: str = "", base_score: float = 0.8):
        import cv2

        if not cascade_path:
            raise ConfigError(
                "the 'cascade' detector needs options.cascade_path pointing at a "
                "haar cascade XML file"
            )
        self._cascade = cv2.CascadeClassifier(cascade_path)
        if self._cascade.empty():
            raise ConfigError(f"could not load cascade file {cascade_path!r}")
        self.base_score = base_score

    def detect(self, frame, *, frame_id=None):
        import cv2

        gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY) if frame.ndim == 3 else frame
        rects = self._cascade.detectMultiScale(gray, 1.1, 5)
        # Haar cascades expose no calibrated score; use a fixed prior.
        return [
            FaceBox(float(x), float(y), float(x + w), float(y + h), self.base_score)
            for (x, y, w, h) in rects
        ]


def softmax_pair(logits: Sequence[float]) -> tuple[float, float]:
    """Numerically stable two-way softmax."""
    a, b = float(logits[0]), float(logits[1])
    m = max(a, b)
    ea, eb = np.exp(a - m), np.exp(b - m)
    s = ea + eb
    return (float(ea / s), float(eb / s))


def prediction_from_scores(scores: Sequence[float]) -> Prediction:
    """Label = argmax over (yawn, no_yawn) scores; confidence = max score."""
    s = (float(scores[0]), float(scores[1]))
    label = "yawn" if s[0] >= s[1] else "no_yawn"
    return Prediction(label=label, scores=s, confidence=max(s))
