"""Synthetic test corpora with exact ground truth.

Renders small face videos whose geometry (face box, all 468 mesh points,
the lip extent) is known analytically, so pipeline outputs can be compared
against programmed values instead of against another model. Also builds a
linearly separable mouth-crop dataset for training sanity checks.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import Prediction, register_detector, register_mesh
from .errors import ConfigError
from .geometry import MESH_POINT_COUNT, FaceBox, lip_indices

BACKGROUND_BGR = (60, 60, 60)
SKIN_BGR = (145, 175, 215)
LIP_BGR = (90, 95, 160)
MOUTH_OPEN_BGR = (35, 35, 95)
EYE_BGR = (50, 60, 70)

# Grayscale means of fixture crops sit near 166 (closed) and 134 (open), so
# a mid-way split reproduces the programmed labels from pixels alone.
MOUTH_MEAN_THRESHOLD = 150.0

MOUTH_MARGIN_PX = 10

_SCHEDULES_TWO_VIDEO = [
    ["no_yawn", "no_yawn", "yawn", "yawn", "yawn", "yawn",
     "no_yawn", "no_yawn", "no_yawn", "no_yawn"],
    ["no_yawn", "yawn", "yawn", "no_yawn", "no_yawn", "no_yawn",
     "yawn", "yawn", "no_yawn", "no_yawn"],
]


@dataclass(frozen=True)
class FrameTruth:
    frame_id: str
    video_id: str
    index: int
    label: str
    face_box: tuple[float, float, float, float]
    landmarks: np.ndarray
    lip_extent: tuple[int, int, int, int]  # min_x, min_y, max_x, max_y
    mouth_box: tuple[int, int, int, int]   # after margin and clamping


class FixtureTruth:
    """Programmed per-frame geometry and labels for a rendered corpus."""

    def __init__(self, size, fps, videos, frames, path=None):
        self.size = tuple(size)
        self.fps = float(fps)
        self.videos: dict[str, list[str]] = videos
        self.frames: dict[str, FrameTruth] = frames
        self.path = path

    def label_counts(self) -> dict[str, int]:
        counts = {"yawn": 0, "no_yawn": 0}
        for ft in self.frames.values():
            counts[ft.label] += 1
        return counts

    def save(self, path: str | Path) -> None:
        doc = {
            "version": 1,
            "size": list(self.size),
            "fps": self.fps,
            "videos": {
                vid: {
                    "labels": labels,
                    "frames": {
                        fid: {
                            "index": ft.index,
                            "label": ft.label,
                            "face_box": list(ft.face_box),
                            "lip_extent": list(ft.lip_extent),
                            "mouth_box": list(ft.mouth_box),
                            "landmarks": ft.landmarks.tolist(),
                        }
                        for fid, ft in self.frames.items()
                        if ft.video_id == vid
                    },
                }
                for vid, labels in self.videos.items()
            },
        }
        Path(path).write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "FixtureTruth":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        videos, frames = {}, {}
        for vid, vdoc in doc["videos"].items():
            videos[vid] = list(vdoc["labels"])
            for fid, fd in vdoc["frames"].items():
                frames[fid] = FrameTruth(
                    frame_id=fid,
                    video_id=vid,
                    index=fd["index"],
                    label=fd["label"],
                    face_box=tuple(fd["face_box"]),
                    landmarks=np.asarray(fd["landmarks"], dtype=np.float64),
                    lip_extent=tuple(fd["lip_extent"]),
                    mouth_box=tuple(fd["mouth_box"]),
                )
        return cls(doc["size"], doc["fps"], videos, frames, path=str(path))


def _video_name(i: int) -> str:
    return f"fx_{chr(ord('a') + i)}" if i < 26 else f"fx_v{i:02d}"


def _default_schedule(video_index: int, n_frames: int) -> list[str]:
    if n_frames == 10 and video_index < len(_SCHEDULES_TWO_VIDEO):
        return list(_SCHEDULES_TWO_VIDEO[video_index])
    rng = random.Random(1000 + video_index)
    labels: list[str] = []
    current = "no_yawn"
    while len(labels) < n_frames:
        labels.extend([current] * rng.randint(2, 4))
        current = "yawn" if current == "no_yawn" else "no_yawn"
    labels = labels[:n_frames]
    if n_frames >= 3 and len(set(labels)) == 1:
        labels[-1] = "yawn" if labels[0] == "no_yawn" else "no_yawn"
    return labels


def _mesh_landmarks(face, mouth_center, mouth_axes) -> tuple[np.ndarray, tuple]:
    """All 468 points; lip ring on the mouth ellipse with exact extrema."""
    cx, cy, a, b = face
    mcx, mcy = mouth_center
    maw, mah = mouth_axes
    indices = lip_indices()
    points = np.zeros((MESH_POINT_COUNT, 3), dtype=np.float64)

    lip_set = set(indices)
    rest = [i for i in range(MESH_POINT_COUNT) if i not in lip_set]
    golden = math.pi * (3.0 - math.sqrt(5.0))
    for k, idx in enumerate(rest):
        r = 0.9 * math.sqrt((k + 1) / (len(rest) + 1))
        theta = k * golden
        points[idx] = (cx + a * r * math.cos(theta), cy + b * r * math.sin(theta), 2.0)

    ring = []
    n = len(indices)
    for k in range(n):
        t = 2.0 * math.pi * k / n
        ring.append((mcx + maw * math.cos(t), mcy + mah * math.sin(t), 1.5))
    # Pin the four cardinal points so the lip extent is exactly integral.
    ring[0] = (float(mcx + maw), float(mcy), 1.5)
    ring[n // 4] = (float(mcx), float(mcy + mah), 1.5)
    ring[n // 2] = (float(mcx - maw), float(mcy), 1.5)
    ring[3 * n // 4] = (float(mcx), float(mcy - mah), 1.5)
    for k, idx in enumerate(indices):
        points[idx] = ring[k]

    extent = (mcx - maw, mcy - mah, mcx + maw, mcy + mah)
    return points, extent


def _render_face_frame(size, face, mouth_center, mouth_axes, mouth_open):
    import cv2

    w, h = size
    cx, cy, a, b = face
    img = np.full((h, w, 3), BACKGROUND_BGR, dtype=np.uint8)
    cv2.ellipse(img, (cx, cy), (a, b), 0, 0, 360, SKIN_BGR, -1)
    for ex in (cx - 26, cx + 26):
        cv2.circle(img, (ex, cy - 28), 7, EYE_BGR, -1)
    color = MOUTH_OPEN_BGR if mouth_open else LIP_BGR
    cv2.ellipse(img, mouth_center, mouth_axes, 0, 0, 360, color, -1)
    return img


def _open_video_writer(path: Path, fps: float, size: tuple[int, int]):
    import cv2

    for fourcc in ("FFV1", "MJPG", "mp4v"):
        writer = cv2.VideoWriter(
            str(path), cv2.VideoWriter_fourcc(*fourcc), fps, size
        )
        if writer.isOpened():
            return writer
        writer.release()
    raise ConfigError(f"no usable video codec for {path}")


def make_fixture_corpus(
    root: str | Path,
    n_videos: int = 2,
    frames_per_video: int = 10,
    size: tuple[int, int] = (320, 240),
    fps: float = 10.0,
    schedules: list[list[str]] | None = None,
) -> FixtureTruth:
    """Render face videos under ``root`` and write ``root/truth.json``.

    Each frame shows one ellipse face on a dark background; the mouth is a
    thin lip seam (no_yawn) or a dark open ellipse (yawn) following the
    per-video label schedule. Mouth position wobbles a little per frame so
    crops and boxes differ across the video.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    w, h = size
    if w < 160 or h < 160:
        raise ConfigError(f"fixture frames must be at least 160x160, got {size}")

    videos: dict[str, list[str]] = {}
    frames: dict[str, FrameTruth] = {}
    for vi in range(n_videos):
        video_id = _video_name(vi)
        labels = list(schedules[vi]) if schedules else _default_schedule(vi, frames_per_video)
        if len(labels) != frames_per_video:
            raise ConfigError(
                f"schedule for video {vi} has {len(labels)} labels, "
                f"expected {frames_per_video}"
            )
        bad = sorted(set(labels) - {"yawn", "no_yawn"})
        if bad:
            raise ConfigError(f"schedule for video {vi} has unknown labels: {bad}")
        videos[video_id] = labels

        cx = w // 2 + (vi % 3 - 1) * 8
        cy = h // 2
        a, b = 66, 78
        writer = _open_video_writer(root / f"{video_id}.avi", fps, size)
        try:
            for index, label in enumerate(labels):
                mouth_open = label == "yawn"
                dx = (index * 37) % 5 - 2
                mcx, mcy = cx + dx, cy + 42
                maw = 25 + index % 3
                mah = 17 if mouth_open else 5
                writer.write(_render_face_frame(
                    size, (cx, cy, a, b), (mcx, mcy), (maw, mah), mouth_open
                ))

                landmarks, extent = _mesh_landmarks(
                    (cx, cy, a, b), (mcx, mcy), (maw, mah)
                )
                mouth_box = (
                    max(extent[0] - MOUTH_MARGIN_PX, 0),
                    max(extent[1] - MOUTH_MARGIN_PX, 0),
                    min(extent[2] + MOUTH_MARGIN_PX, w),
                    min(extent[3] + MOUTH_MARGIN_PX, h),
                )
                frame_id = f"{video_id}_f{index:06d}"
                frames[frame_id] = FrameTruth(
                    frame_id=frame_id,
                    video_id=video_id,
                    index=index,
                    label=label,
                    face_box=(float(cx - a), float(cy - b), float(cx + a), float(cy + b)),
                    landmarks=landmarks,
                    lip_extent=extent,
                    mouth_box=mouth_box,
                )
        finally:
            writer.release()

    truth = FixtureTruth(size, fps, videos, frames, path=str(root / "truth.json"))
    truth.save(truth.path)
    return truth


def _as_truth(truth) -> FixtureTruth:
    if isinstance(truth, FixtureTruth):
        return truth
    return FixtureTruth.load(truth)


@register_detector("fixture")
class FixtureDetector:
    """Returns the programmed face box for each known frame id."""

    def __init__(self, truth, score: float = 0.97, miss_frame_ids=()):
        self.truth = _as_truth(truth)
        self.score = score
        self.miss = set(miss_frame_ids)

    def detect(self, frame, *, frame_id=None):
        ft = self.truth.frames.get(frame_id) if frame_id else None
        if ft is None or frame_id in self.miss:
            return []
        return [FaceBox(*ft.face_box, score=self.score)]


@register_mesh("fixture")
class FixtureMesh:
    """Returns the programmed 468-point array for each known frame id."""

    def __init__(self, truth, miss_frame_ids=()):
        self.truth = _as_truth(truth)
        self.miss = set(miss_frame_ids)

    def extract(self, frame, face, *, frame_id=None):
        ft = self.truth.frames.get(frame_id) if frame_id else None
        if ft is None or frame_id in self.miss:
            return None
        return ft.landmarks.copy()


class MeanIntensityClassifier:
    """Labels a crop by mean gray level: dark open mouths score as yawns.

    Deterministic by construction; the confidence is a stable hash of the
    crop bytes spread over [0.55, 0.99] so orderings that sort on
    confidence see distinct values.
    """

    def __init__(self, threshold: float = MOUTH_MEAN_THRESHOLD):
        self.threshold = threshold

    def classify(self, crop) -> Prediction:
        arr = np.asarray(crop)
        mean = float(arr.mean())
        digest = hashlib.sha256(arr.tobytes()).digest()
        spread = int.from_bytes(digest[:4], "big") % 4096 / 4096.0
        confidence = 0.55 + 0.44 * spread
        if mean < self.threshold:
            return Prediction("yawn", (confidence, 1.0 - confidence), confidence)
        return Prediction("no_yawn", (1.0 - confidence, confidence), confidence)


def make_mouth_dataset(
    n: int = 500, seed: int = 0, grayscale_every: int = 10
) -> tuple[list[np.ndarray], list[str]]:
    """Balanced open/closed mouth crops, separable by mean intensity.

    Sizes vary per image; roughly one in ``grayscale_every`` images is
    single-channel to exercise channel replication in preprocessing.
    """
    import cv2

    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n):
        open_mouth = i % 2 == 0
        side = int(rng.integers(56, 73))
        base = float(rng.uniform(135.0, 165.0))
        img = rng.normal(base, 6.0, (side, side))
        seam_y = side // 2 + int(rng.integers(-3, 4))
        img[seam_y - 1: seam_y + 1, 4: side - 4] -= 25.0
        if open_mouth:
            dark = float(rng.uniform(20.0, 50.0))
            axes = (
                int(side * rng.uniform(0.34, 0.42)),
                int(side * rng.uniform(0.30, 0.38)),
            )
            center = (
                side // 2 + int(rng.integers(-2, 3)),
                side // 2 + int(rng.integers(-2, 3)),
            )
            cv2.ellipse(img, center, axes, float(rng.uniform(-10, 10)),
                        0, 360, dark, -1)
        img = np.clip(img, 0, 255).astype(np.uint8)
        if grayscale_every and i % grayscale_every == grayscale_every - 1:
            images.append(img)
        else:
            bgr = np.stack([img, img, np.clip(img + 6, 0, 255).astype(np.uint8)], axis=-1)
            images.append(bgr)
        labels.append("yawn" if open_mouth else "no_yawn")
    return images, labels


def write_mouth_dataset(out_dir: str | Path, n: int = 500, seed: int = 0) -> dict:
    """Write the synthetic crops as ``<out_dir>/<label>/mNNNN.png``."""
    import cv2

    out_dir = Path(out_dir)
    images, labels = make_mouth_dataset(n=n, seed=seed)
    counts = {"yawn": 0, "no_yawn": 0}
    for i, (img, label) in enumerate(zip(images, labels)):
        class_dir = out_dir / label
        class_dir.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(class_dir / f"m{i:04d}.png"), img)
        counts[label] += 1
    return {"dir": str(out_dir), **counts}


def write_motion_video(
    path: str | Path,
    n_frames: int = 12,
    fps: float = 12.0,
    size: tuple[int, int] = (96, 72),
    return_frames: bool = False,
):
    """Tiny moving-square clip for decode and timestamp tests.

    Returns the frame count, or the rendered frames themselves when
    ``return_frames`` is set (the writer is lossless, so decoded stills can
    be compared pixel-for-pixel).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    w, h = size
    writer = _open_video_writer(path, fps, size)
    rendered = []
    try:
        for i in range(n_frames):
            img = np.full((h, w, 3), 25, dtype=np.uint8)
            x = (i * 7) % max(w - 16, 1)
            y = (i * 5) % max(h - 16, 1)
            img[y: y + 16, x: x + 16] = (40 + 15 * (i % 8), 200, 120)
            writer.write(img)
            if return_frames:
                rendered.append(img)
    finally:
        writer.release()
    return rendered if return_frames else n_frames
