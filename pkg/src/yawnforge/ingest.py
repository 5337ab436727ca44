"""Video decoding into per-frame stills plus corpus manifest construction.

Every downstream stage keys on the frame ids minted here: lexicographic
order of ``<video_id>_f<index:06d>`` equals temporal order within a video.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .errors import ConfigError, ManifestError, VideoDecodeError

logger = logging.getLogger(__name__)

CAMERA_VIEWS = ("dashboard", "rearview", "other")
BEHAVIOR_TAGS = ("normal", "talking", "yawning", "mixed")
VIDEO_EXTENSIONS = {".avi", ".mp4", ".mov", ".mkv", ".mpg", ".mpeg", ".m4v", ".webm"}

_EPOCH_ISO = "1970-01-01T00:00:00+00:00"


def frame_id_for(video_id: str, index: int) -> str:
    return f"{video_id}_f{index:06d}"


@dataclass
class VideoEntry:
    video_id: str
    source_path: str
    camera_view: str = "other"
    behavior_tag: Optional[str] = None
    frame_count: int = 0
    fps: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.camera_view not in CAMERA_VIEWS:
            raise ManifestError(f"camera_view {self.camera_view!r} not in {CAMERA_VIEWS}")
        if self.behavior_tag is not None and self.behavior_tag not in BEHAVIOR_TAGS:
            raise ManifestError(f"behavior_tag {self.behavior_tag!r} not in {BEHAVIOR_TAGS}")

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "source_path": self.source_path,
            "camera_view": self.camera_view,
            "behavior_tag": self.behavior_tag,
            "frame_count": self.frame_count,
            "fps": self.fps,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VideoEntry":
        return cls(**{k: d[k] for k in (
            "video_id", "source_path", "camera_view", "behavior_tag",
            "frame_count", "fps", "width", "height")})


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    video_id: str
    index: int
    image_path: str
    timestamp_ms: float

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "index": self.index,
            "image_path": self.image_path,
            "timestamp_ms": self.timestamp_ms,
        }


@dataclass
class CorpusManifest:
    corpus_id: str
    videos: list[VideoEntry] = field(default_factory=list)
    frames: dict[str, list[FrameRecord]] = field(default_factory=dict)
    total_frames: int = 0
    created_at: str = _EPOCH_ISO

    def validate(self) -> None:
        ids = [v.video_id for v in self.videos]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate video ids in manifest: {dupes}")
        total = sum(v.frame_count for v in self.videos)
        if total != self.total_frames:
            raise ManifestError(
                f"total_frames {self.total_frames} != sum of per-video counts {total}"
            )

    def to_dict(self) -> dict:
        videos = []
        for v in self.videos:
            d = v.to_dict()
            d["frames"] = [f.to_dict() for f in self.frames.get(v.video_id, [])]
            videos.append(d)
        return {
            "corpus_id": self.corpus_id,
            "created_at": self.created_at,
            "total_frames": self.total_frames,
            "videos": videos,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        videos, frames = [], {}
        for vd in d["videos"]:
            entry = VideoEntry.from_dict(vd)
            videos.append(entry)
            frames[entry.video_id] = [
                FrameRecord(
                    frame_id=fd["frame_id"],
                    video_id=entry.video_id,
                    index=fd["index"],
                    image_path=fd["image_path"],
                    timestamp_ms=fd["timestamp_ms"],
                )
                for fd in vd.get("frames", [])
            ]
        m = cls(
            corpus_id=d["corpus_id"],
            videos=videos,
            frames=frames,
            total_frames=d["total_frames"],
            created_at=d["created_at"],
        )
        m.validate()
        return m


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """Persist as one UTF-8 JSON document with stable key order."""
    manifest.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> CorpusManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return CorpusManifest.from_dict(json.load(fh))


def probe_video(path: str | Path) -> tuple[int, float, int, int]:
    """(frame_count, fps, width, height) from container metadata.

    The frame count reported by some containers is approximate; extraction
    corrects it from the actual decode.
    """
    import cv2

    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise VideoDecodeError(f"cannot decode video: {path}")
        count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        fps = float(cap.get(cv2.CAP_PROP_FPS))
        width = int(cap.get(cv2.CAP_PROP_FRAME_WIDTH))
        height = int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT))
    finally:
        cap.release()
    if width <= 0 or height <= 0:
        raise VideoDecodeError(f"video reports non-positive dimensions: {path}")
    if fps <= 0:
        logger.warning("video %s reports no frame rate; assuming 30.0", path)
        fps = 30.0
    return max(count, 0), fps, width, height


def extract_frames(
    video: VideoEntry,
    out_dir: str | Path,
    stride: int = 1,
    image_format: str = "png",
    jpeg_quality: int = 95,
) -> list[FrameRecord]:
    """Decode the video and write every stride-th frame as a still image.

    Frame indices are source decode-order indices (so stride 3 keeps indices
    0, 3, 6, ...). Timestamps come from the container when it reports a
    monotone clock, otherwise from index / fps. ``video.frame_count`` is
    updated to the actual number of decoded source frames.
    """
    import cv2

    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if image_format not in ("png", "jpg"):
        raise ConfigError(f"image_format must be 'png' or 'jpg', got {image_format!r}")

    cap = cv2.VideoCapture(video.source_path)
    if not cap.isOpened():
        cap.release()
        raise VideoDecodeError(f"cannot decode video: {video.source_path}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    imwrite_params = []
    if image_format == "jpg":
        imwrite_params = [cv2.IMWRITE_JPEG_QUALITY, jpeg_quality]

    selected: list[tuple[int, str, float]] = []  # (index, path, container_ts)
    container_ok = True
    prev_ts = -1.0
    index = 0
    try:
        reported = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            ts = float(cap.get(cv2.CAP_PROP_POS_MSEC))
            if ts < 0 or (index > 0 and ts <= prev_ts):
                container_ok = False
            prev_ts = ts
            if index % stride == 0:
                fid = frame_id_for(video.video_id, index)
                image_path = str(out_dir / f"{fid}.{image_format}")
                if not cv2.imwrite(image_path, frame, imwrite_params):
                    raise VideoDecodeError(f"failed to write still image {image_path}")
                selected.append((index, image_path, ts))
            index += 1
    finally:
        cap.release()

    if index == 0:
        logger.warning("video %s decoded zero frames", video.source_path)
    elif reported > index:
        logger.warning(
            "video %s: decoded %d frames but container reported %d; "
            "skipping the unreadable tail", video.source_path, index, reported,
        )

    video.frame_count = index
    fps = video.fps if video.fps > 0 else 30.0
    records = []
    for idx, image_path, ts in selected:
        timestamp = ts if container_ok else idx / fps * 1000.0
        records.append(
            FrameRecord(
                frame_id=frame_id_for(video.video_id, idx),
                video_id=video.video_id,
                index=idx,
                image_path=image_path,
                timestamp_ms=round(timestamp, 3),
            )
        )
    return records


def _sanitize_video_id(rel_path: Path) -> str:
    stem = rel_path.with_suffix("").as_posix()
    return re.sub(r"[^A-Za-z0-9_\-]", "_", stem)


def _apply_view_mapping(rel_posix: str, view_mapping) -> tuple[str, Optional[str]]:
    rules = view_mapping or []
    if isinstance(rules, dict):
        rules = rules.get("rules", [])
    camera_view, behavior_tag = None, None
    for rule in rules:
        pattern = rule.get("pattern")
        if not pattern:
            raise ConfigError(f"view mapping rule missing 'pattern': {rule}")
        unknown = set(rule) - {"pattern", "camera_view", "behavior_tag"}
        if unknown:
            raise ConfigError(f"unknown keys in view mapping rule: {sorted(unknown)}")
        if not fnmatch.fnmatchcase(rel_posix, pattern):
            continue
        if camera_view is None and "camera_view" in rule:
            camera_view = rule["camera_view"]
        if behavior_tag is None and "behavior_tag" in rule:
            behavior_tag = rule["behavior_tag"]
    return camera_view or "other", behavior_tag


def build_corpus_manifest(root_dir: str | Path, view_mapping=None) -> CorpusManifest:
    """Discover videos under ``root_dir`` and probe their container metadata.

    ``view_mapping`` maps filename patterns (fnmatch, matched against the
    POSIX relative path; first matching rule per field wins) to camera_view
    and behavior_tag values.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigError(f"corpus root is not a directory: {root}")

    paths = sorted(
        p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in VIDEO_EXTENSIONS
    )
    if not paths:
        logger.warning("no video files found under %s; manifest will be empty", root)
        return CorpusManifest(corpus_id=root.name)

    videos: list[VideoEntry] = []
    seen: dict[str, Path] = {}
    for path in paths:
        rel = path.relative_to(root)
        video_id = _sanitize_video_id(rel)
        if video_id in seen:
            raise ManifestError(
                f"duplicate video_id {video_id!r} from {seen[video_id]} and {rel}"
            )
        seen[video_id] = rel
        camera_view, behavior_tag = _apply_view_mapping(rel.as_posix(), view_mapping)
        count, fps, width, height = probe_video(path)
        videos.append(
            VideoEntry(
                video_id=video_id,
                source_path=str(path),
                camera_view=camera_view,
                behavior_tag=behavior_tag,
                frame_count=count,
                fps=fps,
                width=width,
                height=height,
            )
        )

    # Deterministic creation stamp: two runs over the same files must produce
    # byte-identical manifests.
    newest = max(p.stat().st_mtime for p in paths)
    created_at = datetime.fromtimestamp(math.floor(newest), tz=timezone.utc).isoformat()
    manifest = CorpusManifest(
        corpus_id=root.name,
        videos=videos,
        total_frames=sum(v.frame_count for v in videos),
        created_at=created_at,
    )
    manifest.validate()
    return manifest


def extract_corpus(
    manifest: CorpusManifest,
    out_dir: str | Path,
    stride: int = 1,
    image_format: str = "png",
) -> CorpusManifest:
    """Extract stills for every video in the manifest into ``out_dir/frames``.

    Per-video jobs are independent; this runs them sequentially and then
    reconciles the per-video counts and the corpus total.
    """
    out_dir = Path(out_dir)
    for video in manifest.videos:
        frames_dir = out_dir / "frames" / video.video_id
        records = manifest.frames.get(video.video_id)
        if records and all(Path(r.image_path).exists() for r in records):
            logger.info("video %s already extracted (%d stills); skipping",
                        video.video_id, len(records))
            continue
        manifest.frames[video.video_id] = extract_frames(
            video, frames_dir, stride=stride, image_format=image_format
        )
    manifest.total_frames = sum(v.frame_count for v in manifest.videos)
    manifest.validate()
    return manifest
