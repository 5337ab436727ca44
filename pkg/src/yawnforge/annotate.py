"""Machine pass: propose a label for every extracted frame.

For each frame: detect faces, keep the primary one, fit the mesh, cut the
mouth crop, classify it. Frames where any stage comes up empty get the
``no_face`` label with zero confidence so reviewers can rescue them; their
review image falls back to the full frame. Results become the write-once
auto baseline of an annotation store.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backends import (
    DetectorConfig,
    FaceDetector,
    MeshProvider,
    MouthClassifier,
    create_detector,
    create_mesh,
    detect_faces,
    extract_landmarks,
)
from .errors import DegenerateLipExtentError, StoreError
from .geometry import crop_image, mouth_bbox, select_primary_face
from .ingest import CorpusManifest
from .store import SNAPSHOT_NAME, AnnotationStore

logger = logging.getLogger(__name__)


@dataclass
class AnnotateReport:
    total: int = 0
    annotated: int = 0
    skipped: int = 0
    no_face: int = 0
    errors: list[dict] = field(default_factory=list)
    label_counts: dict = field(default_factory=dict)
    store: Optional[AnnotationStore] = None

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "annotated": self.annotated,
            "skipped": self.skipped,
            "no_face": self.no_face,
            "errors": self.errors,
            "label_counts": self.label_counts,
        }


def _videos_meta(manifest: CorpusManifest) -> dict:
    return {
        v.video_id: {
            "frame_count": v.frame_count,
            "fps": v.fps,
            "width": v.width,
            "height": v.height,
            "camera_view": v.camera_view,
            "behavior_tag": v.behavior_tag,
        }
        for v in manifest.videos
    }


def _frames_index(manifest: CorpusManifest) -> dict:
    index = {}
    for records in manifest.frames.values():
        for r in records:
            index[r.frame_id] = {
                "video_id": r.video_id,
                "index": r.index,
                "image_path": r.image_path,
                "timestamp_ms": r.timestamp_ms,
            }
    return index


def auto_annotate(
    manifest: CorpusManifest,
    classifier: MouthClassifier,
    store_dir: str | Path | None = None,
    detector: FaceDetector | None = None,
    detector_cfg: DetectorConfig | None = None,
    mesh: MeshProvider | None = None,
    mesh_backend: str = "none",
    mesh_options: dict | None = None,
    margin_px: int = 10,
    log_every: int = 200,
) -> AnnotateReport:
    """Annotate every manifest frame that is not already in the store.

    Reruns resume: frames with an existing auto label are skipped, never
    rewritten. Mouth crops are written next to the store under ``crops/``
    (or left in memory-only runs uncropped on disk, with crop paths still
    recorded when a crops directory exists).
    """
    import cv2

    cfg = detector_cfg or DetectorConfig()
    if detector is None:
        detector = create_detector(cfg)
    if mesh is None:
        mesh = create_mesh(mesh_backend, mesh_options)

    frames_index = _frames_index(manifest)
    report = AnnotateReport(total=len(frames_index))

    store: Optional[AnnotationStore] = None
    if store_dir is not None:
        store_dir = Path(store_dir)
        if (store_dir / SNAPSHOT_NAME).exists():
            store = AnnotationStore.open(store_dir)
            logger.info("resuming store at %s with %d annotations",
                        store_dir, len(store.annotations))
    crops_dir = None
    if store_dir is not None:
        crops_dir = store_dir / "crops"
        crops_dir.mkdir(parents=True, exist_ok=True)

    existing = set(store.annotations) if store is not None else set()
    new_rows: dict[str, dict] = {}
    done = 0
    for frame_id in sorted(frames_index):
        meta = frames_index[frame_id]
        done += 1
        if frame_id in existing:
            report.skipped += 1
            continue
        frame = cv2.imread(meta["image_path"], cv2.IMREAD_COLOR)
        if frame is None:
            report.errors.append({
                "frame_id": frame_id,
                "error": f"unreadable frame image: {meta['image_path']}",
            })
            continue

        label, confidence, box_tuple, crop_path = "no_face", 0.0, None, meta["image_path"]
        faces = detect_faces(frame, cfg, detector=detector, frame_id=frame_id)
        face = select_primary_face(faces)
        if face is not None:
            landmarks = extract_landmarks(frame, face, mesh, frame_id=frame_id)
            if landmarks is not None:
                try:
                    box = mouth_bbox(
                        landmarks, margin_px=margin_px,
                        frame_w=frame.shape[1], frame_h=frame.shape[0],
                    )
                except DegenerateLipExtentError:
                    box = None
                if box is not None:
                    crop = crop_image(frame, box)
                    if crops_dir is not None:
                        crop_path = str(crops_dir / f"{frame_id}_mouth.png")
                        cv2.imwrite(crop_path, crop)
                    prediction = classifier.classify(crop)
                    label = prediction.label
                    confidence = float(prediction.confidence)
                    box_tuple = list(box.as_tuple())

        if label == "no_face":
            report.no_face += 1
        new_rows[frame_id] = {
            "frame_id": frame_id,
            "video_id": meta["video_id"],
            "index": meta["index"],
            "auto_label": label,
            "confidence": confidence,
            "mouth_box": box_tuple,
            "crop_path": crop_path,
        }
        report.annotated += 1
        if log_every and done % log_every == 0:
            logger.info("annotated %d/%d frames", done, report.total)

    if store is None:
        store = AnnotationStore.create(
            store_dir,
            corpus_id=manifest.corpus_id,
            videos=_videos_meta(manifest),
            frames=frames_index,
            annotations=new_rows,
            created_at=manifest.created_at,
        )
    else:
        added = store.extend_annotations(new_rows)
        if added != len(new_rows):
            raise StoreError(
                f"expected to add {len(new_rows)} annotations, added {added}"
            )
    report.store = store
    report.label_counts = store.label_counts(effective=False)
    logger.info(
        "machine pass complete: annotated %d/%d frames (%d without a face)",
        report.annotated, report.total, report.no_face,
    )
    return report
