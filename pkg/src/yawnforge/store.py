"""Annotation store: an auto-label snapshot plus an append-only event log.

The machine pass writes every frame's auto label once, into a snapshot that
is never edited afterwards. Everything reviewers do (batch creation, lease
checkout, submission) is an event appended to ``events.jsonl``. Current
state is always snapshot + replayed events, so reopening a store reproduces
the live in-memory state exactly, and auto labels survive any amount of
review for later agreement measurement.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import (
    BatchConflictError,
    BatchCoverageError,
    NothingVerifiedError,
    StoreError,
)

SNAPSHOT_NAME = "annotations.snapshot.json"
EVENTS_NAME = "events.jsonl"

BATCH_SIZE = 64
DEFAULT_LEASE_TTL_S = 1800
ORDERINGS = ("by_video", "by_confidence_asc")

AUTO_LABELS = ("yawn", "no_yawn", "no_face")


def batch_id_for(frame_ids: Iterable[str]) -> str:
    """Content hash of the member list, so ids are stable across machines."""
    digest = hashlib.sha256("\n".join(frame_ids).encode("utf-8")).hexdigest()
    return digest[:16]


def _now_ms() -> int:
    return int(time.time() * 1000)


def _iso(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc).isoformat(
        timespec="milliseconds"
    )


class CheckoutResult:
    """Outcome of a checkout attempt.

    status "ok" carries the batch; "empty" means nothing left to review;
    "locked" means other sessions hold every pending batch, retry after
    ``retry_after_s`` seconds.
    """

    __slots__ = ("status", "batch", "frames", "retry_after_s")

    def __init__(self, status, batch=None, frames=None, retry_after_s=None):
        self.status = status
        self.batch = batch
        self.frames = frames
        self.retry_after_s = retry_after_s


class AnnotationStore:
    def __init__(
        self,
        directory: str | Path | None = None,
        clock: Callable[[], int] | None = None,
        lease_ttl_s: int = DEFAULT_LEASE_TTL_S,
    ):
        self.directory = Path(directory) if directory is not None else None
        self.clock = clock or _now_ms
        self.lease_ttl_s = lease_ttl_s
        self._lock = threading.RLock()
        self._seq = 0
        self.corpus_id = ""
        self.created_at = ""
        self.videos: dict[str, dict] = {}
        self.frames: dict[str, dict] = {}
        self.annotations: dict[str, dict] = {}
        self.batches: list[dict] = []
        self._batch_index: dict[str, dict] = {}

    # ---------------- construction ----------------

    @classmethod
    def create(
        cls,
        directory: str | Path | None,
        corpus_id: str,
        videos: dict[str, dict],
        frames: dict[str, dict],
        annotations: dict[str, dict],
        created_at: str,
        clock: Callable[[], int] | None = None,
        lease_ttl_s: int = DEFAULT_LEASE_TTL_S,
    ) -> "AnnotationStore":
        store = cls(directory, clock=clock, lease_ttl_s=lease_ttl_s)
        store.corpus_id = corpus_id
        store.created_at = created_at
        store.videos = dict(videos)
        store.frames = dict(frames)
        for frame_id, row in annotations.items():
            store._validate_auto_row(frame_id, row)
            store.annotations[frame_id] = cls._fresh_row(row)
        if store.directory is not None:
            store.directory.mkdir(parents=True, exist_ok=True)
            events = store.directory / EVENTS_NAME
            if events.exists() and events.stat().st_size > 0:
                raise StoreError(
                    f"refusing to create a store over an existing event log: {events}"
                )
            store._write_snapshot()
        return store

    @classmethod
    def open(
        cls,
        directory: str | Path,
        clock: Callable[[], int] | None = None,
        lease_ttl_s: int = DEFAULT_LEASE_TTL_S,
    ) -> "AnnotationStore":
        directory = Path(directory)
        snap_path = directory / SNAPSHOT_NAME
        if not snap_path.exists():
            raise StoreError(f"no annotation store at {directory} (missing {SNAPSHOT_NAME})")
        store = cls(directory, clock=clock, lease_ttl_s=lease_ttl_s)
        snap = json.loads(snap_path.read_text(encoding="utf-8"))
        store.corpus_id = snap["corpus_id"]
        store.created_at = snap["created_at"]
        store.videos = snap["videos"]
        store.frames = snap["frames"]
        for frame_id, row in snap["annotations"].items():
            store.annotations[frame_id] = cls._fresh_row(row)

        events_path = directory / EVENTS_NAME
        if events_path.exists():
            with open(events_path, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        event = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise StoreError(
                            f"corrupt event log line {line_no} in {events_path}: {exc}"
                        ) from exc
                    if event["seq"] != store._seq + 1:
                        raise StoreError(
                            f"event log gap at line {line_no}: "
                            f"seq {event['seq']} after {store._seq}"
                        )
                    store._apply(event)
                    store._seq = event["seq"]
        return store

    @staticmethod
    def _fresh_row(row: dict) -> dict:
        return {
            "frame_id": row["frame_id"],
            "video_id": row["video_id"],
            "index": row["index"],
            "auto_label": row["auto_label"],
            "confidence": row["confidence"],
            "mouth_box": list(row["mouth_box"]) if row.get("mouth_box") else None,
            "crop_path": row.get("crop_path"),
            "final_label": row.get("final_label"),
            "verified": bool(row.get("verified", False)),
            "reviewer": row.get("reviewer"),
            "reviewed_at": row.get("reviewed_at"),
            "batch_id": row.get("batch_id"),
        }

    def _validate_auto_row(self, frame_id: str, row: dict) -> None:
        if row["frame_id"] != frame_id:
            raise StoreError(f"annotation key {frame_id!r} != row id {row['frame_id']!r}")
        if row["auto_label"] not in AUTO_LABELS:
            raise StoreError(
                f"auto_label {row['auto_label']!r} for {frame_id} not in {AUTO_LABELS}"
            )
        if not (0.0 <= float(row["confidence"]) <= 1.0):
            raise StoreError(f"confidence out of range for {frame_id}: {row['confidence']}")
        if frame_id in self.annotations:
            raise StoreError(f"auto label for {frame_id} already recorded; it is write-once")

    def extend_annotations(self, annotations: dict[str, dict]) -> int:
        """Add auto rows for new frames; existing rows must not change."""
        with self._lock:
            added = 0
            for frame_id, row in annotations.items():
                existing = self.annotations.get(frame_id)
                if existing is not None:
                    if existing["auto_label"] != row["auto_label"]:
                        raise StoreError(
                            f"auto label for {frame_id} is write-once "
                            f"({existing['auto_label']!r} -> {row['auto_label']!r} rejected)"
                        )
                    continue
                self._validate_auto_row(frame_id, row)
                self.annotations[frame_id] = self._fresh_row(row)
                added += 1
            if added and self.directory is not None:
                self._write_snapshot()
            return added

    def _write_snapshot(self) -> None:
        snap = {
            "version": 1,
            "corpus_id": self.corpus_id,
            "created_at": self.created_at,
            "videos": self.videos,
            "frames": self.frames,
            "annotations": {
                fid: self._auto_part(row) for fid, row in sorted(self.annotations.items())
            },
        }
        path = self.directory / SNAPSHOT_NAME
        path.write_text(
            json.dumps(snap, sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    @staticmethod
    def _auto_part(row: dict) -> dict:
        # Review outcomes never enter the snapshot; they live in events only.
        return {
            "frame_id": row["frame_id"],
            "video_id": row["video_id"],
            "index": row["index"],
            "auto_label": row["auto_label"],
            "confidence": row["confidence"],
            "mouth_box": row["mouth_box"],
            "crop_path": row["crop_path"],
        }

    # ---------------- events ----------------

    def _record(self, kind: str, payload: dict) -> dict:
        event = {"seq": self._seq + 1, "ts": self.clock(), "kind": kind,
                 "payload": payload}
        self._apply(event)
        self._seq = event["seq"]
        if self.directory is not None:
            with open(self.directory / EVENTS_NAME, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
                fh.flush()
        return event

    def _apply(self, event: dict) -> None:
        kind, payload = event["kind"], event["payload"]
        if kind == "batches_created":
            for b in payload["batches"]:
                batch = {
                    "batch_id": b["batch_id"],
                    "frame_ids": list(b["frame_ids"]),
                    "ordering": payload["ordering"],
                    "status": "pending",
                    "lease": None,
                    "submitted_by": None,
                    "submitted_at": None,
                }
                self.batches.append(batch)
                self._batch_index[batch["batch_id"]] = batch
                for fid in batch["frame_ids"]:
                    self.annotations[fid]["batch_id"] = batch["batch_id"]
        elif kind == "batch_locked":
            batch = self._batch_index[payload["batch_id"]]
            batch["status"] = "locked"
            batch["lease"] = {
                "session": payload["session"],
                "reviewer": payload["reviewer"],
                "expires_at_ms": payload["expires_at_ms"],
            }
        elif kind == "batch_submitted":
            batch = self._batch_index[payload["batch_id"]]
            batch["status"] = "submitted"
            batch["lease"] = None
            batch["submitted_by"] = payload["reviewer"]
            batch["submitted_at"] = payload["reviewed_at"]
            for decision in payload["decisions"]:
                row = self.annotations[decision["frame_id"]]
                if row["verified"] and row["final_label"] != decision["final_label"]:
                    raise StoreError(
                        f"refusing to change verified frame {decision['frame_id']}"
                    )
                row["final_label"] = decision["final_label"]
                if decision["final_label"] == "no_face":
                    # a no-face verdict invalidates the machine's mouth box;
                    # the original survives in the write-once auto snapshot
                    row["mouth_box"] = None
                row["verified"] = True
                row["reviewer"] = payload["reviewer"]
                row["reviewed_at"] = payload["reviewed_at"]
        elif kind == "resubmit_noop":
            pass
        else:
            raise StoreError(f"unknown event kind {kind!r} in log")

    # ---------------- batching ----------------

    def _unbatched_unverified(self) -> list[dict]:
        return [
            row for row in self.annotations.values()
            if not row["verified"] and row["batch_id"] is None
        ]

    def make_batches(self, ordering: str = "by_video",
                     batch_size: int = BATCH_SIZE) -> list[dict]:
        """Partition every unreviewed, not-yet-batched frame into batches of
        at most ``batch_size``. Returns the new batch dicts (may be empty)."""
        if ordering not in ORDERINGS:
            raise StoreError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")
        if batch_size < 1:
            raise StoreError(f"batch_size must be >= 1, got {batch_size}")
        with self._lock:
            rows = self._unbatched_unverified()
            if not rows:
                return []
            if ordering == "by_video":
                rows.sort(key=lambda r: r["frame_id"])
            else:
                rows.sort(key=lambda r: (r["confidence"], r["frame_id"]))
            chunks = [
                [r["frame_id"] for r in rows[i: i + batch_size]]
                for i in range(0, len(rows), batch_size)
            ]
            payload = {
                "ordering": ordering,
                "batches": [
                    {"batch_id": batch_id_for(chunk), "frame_ids": chunk}
                    for chunk in chunks
                ],
            }
            for b in payload["batches"]:
                if b["batch_id"] in self._batch_index:
                    raise StoreError(f"batch id collision: {b['batch_id']}")
            self._record("batches_created", payload)
            return [self._batch_index[b["batch_id"]] for b in payload["batches"]]

    def get_batch(self, batch_id: str) -> Optional[dict]:
        return self._batch_index.get(batch_id)

    def batch_frames(self, batch_id: str) -> list[dict]:
        batch = self._batch_index[batch_id]
        return [dict(self.annotations[fid]) for fid in batch["frame_ids"]]

    def _lease_active(self, batch: dict, now_ms: int) -> bool:
        lease = batch.get("lease")
        return bool(lease) and lease["expires_at_ms"] > now_ms

    def checkout(self, session: str, reviewer: str,
                 ordering: str = "by_video") -> CheckoutResult:
        """Lease the next reviewable batch to this session.

        A session that already holds a live lease gets the same batch back.
        Expired leases are fair game for other sessions.
        """
        with self._lock:
            now = self.clock()
            # all pending work gets batched lazily on first checkout
            if not any(b["status"] != "submitted" for b in self.batches):
                self.make_batches(ordering=ordering)

            open_batches = [b for b in self.batches if b["status"] != "submitted"]
            if not open_batches:
                return CheckoutResult("empty")

            for batch in open_batches:
                if self._lease_active(batch, now) and batch["lease"]["session"] == session:
                    return CheckoutResult("ok", batch=dict(batch),
                                          frames=self.batch_frames(batch["batch_id"]))

            for batch in open_batches:
                if not self._lease_active(batch, now):
                    expires = now + self.lease_ttl_s * 1000
                    self._record("batch_locked", {
                        "batch_id": batch["batch_id"],
                        "session": session,
                        "reviewer": reviewer,
                        "expires_at_ms": expires,
                    })
                    return CheckoutResult("ok", batch=dict(batch),
                                          frames=self.batch_frames(batch["batch_id"]))

            soonest = min(b["lease"]["expires_at_ms"] for b in open_batches)
            retry = max(1, math.ceil((soonest - now) / 1000.0))
            return CheckoutResult("locked", retry_after_s=retry)

    # ---------------- submission ----------------

    def submit(self, batch_id: str, session: str, reviewer: str,
               decisions: list[dict]) -> dict:
        """Record final labels for every frame of a batch.

        Coverage must be exact: one decision per member frame, no extras.
        Resubmitting identical decisions is an acknowledged no-op; different
        decisions for an already-submitted batch are a conflict.
        """
        with self._lock:
            batch = self._batch_index.get(batch_id)
            if batch is None:
                raise KeyError(batch_id)

            seen: dict[str, str] = {}
            for d in decisions:
                fid, label = d.get("frame_id"), d.get("final_label")
                if label not in AUTO_LABELS:
                    raise BatchCoverageError(
                        f"invalid final_label {label!r} for frame {fid!r}; "
                        f"expected one of {list(AUTO_LABELS)}",
                        missing=[], unknown=[f"{fid} (label {label!r})"],
                    )
                if fid in seen:
                    raise BatchCoverageError(
                        f"duplicate decision for frame {fid}", missing=[], unknown=[fid],
                    )
                seen[fid] = label
            members = set(batch["frame_ids"])
            missing = sorted(members - seen.keys())
            unknown = sorted(seen.keys() - members)
            if missing or unknown:
                raise BatchCoverageError(
                    f"decisions must cover the batch exactly: "
                    f"{len(missing)} missing, {len(unknown)} unknown",
                    missing=missing, unknown=unknown,
                )

            if batch["status"] == "submitted":
                identical = all(
                    self.annotations[fid]["final_label"] == seen[fid]
                    for fid in batch["frame_ids"]
                )
                if identical:
                    self._record("resubmit_noop", {
                        "batch_id": batch_id, "session": session,
                    })
                    return {"batch_id": batch_id, "verified": len(members),
                            "idempotent": True}
                raise BatchConflictError(
                    f"batch {batch_id} was already submitted with different labels"
                )

            # Submission requires having checked the batch out. A lease this
            # session let expire is still honored unless someone else claimed
            # the batch in the meantime.
            now = self.clock()
            lease = batch.get("lease")
            if lease is None:
                raise BatchConflictError(
                    f"batch {batch_id} was never checked out by this session; "
                    f"check it out first"
                )
            if lease["session"] != session:
                raise BatchConflictError(f"batch {batch_id} is leased to another session")

            self._record("batch_submitted", {
                "batch_id": batch_id,
                "session": session,
                "reviewer": reviewer,
                "reviewed_at": _iso(now),
                "decisions": [
                    {"frame_id": fid, "final_label": seen[fid]}
                    for fid in batch["frame_ids"]
                ],
            })
            return {"batch_id": batch_id, "verified": len(members), "idempotent": False}

    # ---------------- reporting ----------------

    @property
    def verified_count(self) -> int:
        return sum(1 for row in self.annotations.values() if row["verified"])

    def agreement_report(self) -> dict:
        """Auto-vs-human agreement over the verified frames.

        fp/fn treat yawn as the positive class: fp counts machine yawns the
        reviewer rejected, fn counts yawns the machine missed.
        """
        verified = [r for r in self.annotations.values() if r["verified"]]
        if not verified:
            raise NothingVerifiedError(
                "no frames have been human-verified yet; agreement is undefined "
                "(review at least one batch first)"
            )
        n_agree = sum(1 for r in verified if r["auto_label"] == r["final_label"])
        fp = sum(1 for r in verified
                 if r["auto_label"] == "yawn" and r["final_label"] != "yawn")
        fn = sum(1 for r in verified
                 if r["auto_label"] != "yawn" and r["final_label"] == "yawn")
        pairs: dict[str, int] = {}
        per_video: dict[str, dict] = {}
        for r in verified:
            key = f"{r['auto_label']}->{r['final_label']}"
            pairs[key] = pairs.get(key, 0) + 1
            pv = per_video.setdefault(r["video_id"], {"verified": 0, "agree": 0})
            pv["verified"] += 1
            pv["agree"] += int(r["auto_label"] == r["final_label"])
        for pv in per_video.values():
            pv["rate"] = pv["agree"] / pv["verified"]
        return {
            "verified": len(verified),
            "agree": n_agree,
            "rate": n_agree / len(verified),
            "fp": fp,
            "fn": fn,
            "pairs": dict(sorted(pairs.items())),
            "per_video": dict(sorted(per_video.items())),
        }

    def progress(self) -> dict:
        with self._lock:
            now = self.clock()
            total = len(self.annotations)
            verified = self.verified_count
            by_status = {"pending": 0, "locked": 0, "submitted": 0}
            for b in self.batches:
                if b["status"] == "submitted":
                    by_status["submitted"] += 1
                elif self._lease_active(b, now):
                    by_status["locked"] += 1
                else:
                    by_status["pending"] += 1
            per_video: dict[str, dict] = {}
            for row in self.annotations.values():
                pv = per_video.setdefault(row["video_id"], {"frames": 0, "verified": 0})
                pv["frames"] += 1
                pv["verified"] += int(row["verified"])
            try:
                agreement = self.agreement_report()["rate"]
            except NothingVerifiedError:
                agreement = None
            return {
                "corpus_id": self.corpus_id,
                "total_frames": total,
                "auto": total - verified,
                "verified": verified,
                "agreement_rate": agreement,
                "batches": by_status,
                "per_video": dict(sorted(per_video.items())),
            }

    def label_counts(self, effective: bool = True) -> dict[str, int]:
        """Histogram of labels; effective = final when verified else auto."""
        counts: dict[str, int] = {}
        for row in self.annotations.values():
            label = row["final_label"] if (effective and row["verified"]) else row["auto_label"]
            counts[label] = counts.get(label, 0) + 1
        return dict(sorted(counts.items()))

    def state_hash(self) -> str:
        """Hash of the full replayable state (annotations and batches)."""
        state = {
            "corpus_id": self.corpus_id,
            "created_at": self.created_at,
            "annotations": {fid: self.annotations[fid] for fid in sorted(self.annotations)},
            "batches": self.batches,
        }
        blob = json.dumps(state, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()
