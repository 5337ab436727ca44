"""Dataset exports and corpus statistics from an annotation store.

Two dataset shapes: class-folder image trees for classifier training, and
detection-style labels (one normalized mouth box per frame) with train/val
lists split at video granularity so no video leaks across the split.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import shutil
from pathlib import Path

from .backends import LABELS
from .errors import ExportError
from .store import AnnotationStore

logger = logging.getLogger(__name__)

CLASS_MAP = {"yawn": 0, "no_yawn": 1}
INCLUDE_MODES = ("verified_only", "all")


def detection_line(label: str, box, frame_w: int, frame_h: int) -> str:
    """``<class> <cx> <cy> <w> <h>`` with center/size normalized to the
    frame and written with six decimals."""
    if label not in CLASS_MAP:
        raise ExportError(f"no class id for label {label!r}")
    if frame_w <= 0 or frame_h <= 0:
        raise ExportError(f"frame size must be positive, got {frame_w}x{frame_h}")
    x0, y0, x1, y1 = box
    if not (0 <= x0 < x1 <= frame_w and 0 <= y0 < y1 <= frame_h):
        raise ExportError(
            f"box {box} does not fit inside a {frame_w}x{frame_h} frame"
        )
    cx = (x0 + x1) / 2.0 / frame_w
    cy = (y0 + y1) / 2.0 / frame_h
    w = (x1 - x0) / frame_w
    h = (y1 - y0) / frame_h
    return f"{CLASS_MAP[label]} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"


def parse_detection_line(line: str, frame_w: int, frame_h: int):
    """Inverse of detection_line: (label, (x0, y0, x1, y1)) in pixels."""
    parts = line.split()
    if len(parts) != 5:
        raise ExportError(f"malformed detection line: {line!r}")
    class_id = int(parts[0])
    by_id = {v: k for k, v in CLASS_MAP.items()}
    if class_id not in by_id:
        raise ExportError(f"unknown class id {class_id} in line {line!r}")
    cx, cy, w, h = (float(p) for p in parts[1:])
    x0 = (cx - w / 2.0) * frame_w
    y0 = (cy - h / 2.0) * frame_h
    x1 = (cx + w / 2.0) * frame_w
    y1 = (cy + h / 2.0) * frame_h
    return by_id[class_id], (x0, y0, x1, y1)


def _effective_rows(store: AnnotationStore, include: str) -> list[dict]:
    if include not in INCLUDE_MODES:
        raise ExportError(f"include must be one of {INCLUDE_MODES}, got {include!r}")
    rows = []
    for frame_id in sorted(store.annotations):
        row = dict(store.annotations[frame_id])
        if include == "verified_only" and not row["verified"]:
            continue
        label = row["final_label"] if row["verified"] else row["auto_label"]
        if label == "no_face":
            continue
        row["label"] = label
        rows.append(row)
    if include == "verified_only" and not rows:
        raise ExportError(
            "nothing to export: no verified frames "
            "(run a review pass or export with include='all')"
        )
    return rows


def _export_id(store: AnnotationStore, layout: str, include: str) -> str:
    blob = f"{layout}:{include}:{store.state_hash()}".encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_summary(out_dir: Path, summary: dict) -> None:
    (out_dir / "export.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def export_classification(
    store: AnnotationStore,
    out_dir: str | Path,
    include: str = "verified_only",
) -> dict:
    """Copy frame images into ``<out_dir>/<label>/``; returns the summary."""
    out_dir = Path(out_dir)
    rows = _effective_rows(store, include)
    counts = {label: 0 for label in LABELS}
    for row in rows:
        src = Path(store.frames[row["frame_id"]]["image_path"])
        if not src.exists():
            raise ExportError(f"frame image missing: {src}")
        dest = out_dir / row["label"] / f"{row['frame_id']}{src.suffix}"
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dest)
        counts[row["label"]] += 1
    excluded = len(store.annotations) - len(rows)
    summary = {
        "layout": "classification_folders",
        "export_id": _export_id(store, "classification_folders", include),
        "created_at": store.created_at,
        "corpus_id": store.corpus_id,
        "store_hash": store.state_hash(),
        "include": include,
        "counts": counts,
        "excluded": excluded,
        "class_map": CLASS_MAP,
    }
    _write_summary(out_dir, summary)
    return summary


def export_detection(
    store: AnnotationStore,
    out_dir: str | Path,
    include: str = "verified_only",
    train_fraction: float = 0.8,
    seed: int = 17,
) -> dict:
    """Images plus one-line label files, with video-grouped train/val lists.

    Frames without a mouth box (no-face rescues) cannot be exported here and
    are counted under ``skipped_no_box``.
    """
    if not (0.0 < train_fraction < 1.0):
        raise ExportError(f"train_fraction must be in (0, 1), got {train_fraction}")
    out_dir = Path(out_dir)
    rows = _effective_rows(store, include)
    usable = [r for r in rows if r["mouth_box"]]
    skipped_no_box = len(rows) - len(usable)
    if not usable:
        raise ExportError("no frames with a mouth box to export")

    images_dir = out_dir / "images"
    labels_dir = out_dir / "labels"
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)

    by_video: dict[str, list[str]] = {}
    counts = {label: 0 for label in LABELS}
    for row in usable:
        meta = store.frames[row["frame_id"]]
        video = store.videos[row["video_id"]]
        src = Path(meta["image_path"])
        if not src.exists():
            raise ExportError(f"frame image missing: {src}")
        name = f"{row['frame_id']}{src.suffix}"
        shutil.copyfile(src, images_dir / name)
        line = detection_line(
            row["label"], row["mouth_box"], video["width"], video["height"]
        )
        (labels_dir / f"{row['frame_id']}.txt").write_text(line + "\n", encoding="utf-8")
        by_video.setdefault(row["video_id"], []).append(f"images/{name}")
        counts[row["label"]] += 1

    video_ids = sorted(by_video)
    random.Random(seed).shuffle(video_ids)
    total = sum(len(v) for v in by_video.values())
    train_paths: list[str] = []
    val_paths: list[str] = []
    for vid in video_ids:
        target = train_paths if len(train_paths) < train_fraction * total else val_paths
        target.extend(by_video[vid])
    if not val_paths:
        logger.warning(
            "all %d videos landed in train; add videos for a usable val split",
            len(video_ids),
        )
    (out_dir / "train.txt").write_text(
        "".join(p + "\n" for p in sorted(train_paths)), encoding="utf-8")
    (out_dir / "val.txt").write_text(
        "".join(p + "\n" for p in sorted(val_paths)), encoding="utf-8")

    summary = {
        "layout": "detection_labels",
        "export_id": _export_id(store, "detection_labels", include),
        "created_at": store.created_at,
        "corpus_id": store.corpus_id,
        "store_hash": store.state_hash(),
        "include": include,
        "counts": counts,
        "skipped_no_box": skipped_no_box,
        "train_images": len(train_paths),
        "val_images": len(val_paths),
        "class_map": CLASS_MAP,
    }
    _write_summary(out_dir, summary)
    return summary


def class_balance(store: AnnotationStore, include: str = "all") -> dict:
    """Label histogram, per video and overall, with the yawn : no_yawn ratio
    (None when undefined)."""
    rows = _effective_rows(store, include)
    counts = {label: 0 for label in LABELS}
    per_video: dict[str, dict[str, int]] = {}
    for row in rows:
        counts[row["label"]] += 1
        video = per_video.setdefault(
            row["video_id"], {label: 0 for label in LABELS}
        )
        video[row["label"]] += 1
    no_face = sum(
        1 for r in store.annotations.values()
        if (r["final_label"] if r["verified"] else r["auto_label"]) == "no_face"
    )
    ratio = counts["yawn"] / counts["no_yawn"] if counts["no_yawn"] else None
    return {
        "counts": counts,
        "per_video": {vid: per_video[vid] for vid in sorted(per_video)},
        "no_face": no_face,
        "total": len(store.annotations),
        "yawn_to_no_yawn": ratio,
    }


def yawn_episodes(labels_by_index: list[tuple[int, str]]) -> list[tuple[int, int]]:
    """Maximal runs of consecutive-index yawn frames, inclusive bounds."""
    episodes = []
    start = prev = None
    for index, label in sorted(labels_by_index):
        if label == "yawn":
            if start is None or index != prev + 1:
                if start is not None:
                    episodes.append((start, prev))
                start = index
            prev = index
        else:
            if start is not None:
                episodes.append((start, prev))
                start = prev = None
    if start is not None:
        episodes.append((start, prev))
    return episodes


def timeline_report(
    store: AnnotationStore,
    video_id: str | None = None,
    plot_path: str | Path | None = None,
) -> dict:
    """Per-video label sequences and yawn episodes from effective labels."""
    videos: dict[str, list[tuple[int, str]]] = {}
    for row in store.annotations.values():
        if video_id is not None and row["video_id"] != video_id:
            continue
        label = row["final_label"] if row["verified"] else row["auto_label"]
        videos.setdefault(row["video_id"], []).append((row["index"], label))
    if video_id is not None and not videos:
        raise ExportError(f"no annotations for video {video_id!r}")

    report = {}
    for vid in sorted(videos):
        seq = sorted(videos[vid])
        labels = [label for _, label in seq]
        episodes = yawn_episodes(seq)
        report[vid] = {
            "frames": len(seq),
            "yawn": labels.count("yawn"),
            "no_yawn": labels.count("no_yawn"),
            "no_face": labels.count("no_face"),
            "episodes": [list(e) for e in episodes],
        }

    if plot_path is not None:
        _plot_timeline(report, videos, plot_path)
    return report


def _plot_timeline(report: dict, videos: dict, plot_path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    level = {"no_yawn": 0, "yawn": 1, "no_face": -1}
    fig, axes = plt.subplots(
        len(report), 1, figsize=(10, 1.8 * max(len(report), 1)), squeeze=False
    )
    for ax, vid in zip(axes[:, 0], sorted(report)):
        seq = sorted(videos[vid])
        xs = [i for i, _ in seq]
        ys = [level[label] for _, label in seq]
        ax.step(xs, ys, where="post")
        ax.set_yticks([-1, 0, 1], ["no_face", "no_yawn", "yawn"])
        ax.set_ylim(-1.5, 1.5)
        ax.set_title(vid, fontsize=9)
    axes[-1, 0].set_xlabel("frame index")
    fig.tight_layout()
    fig.savefig(plot_path, dpi=110)
    plt.close(fig)
