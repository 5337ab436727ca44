"""Event-sourced annotation store: batching, leases, submission, replay.

Replay equivalence is the core invariant: any reachable live state must be
reproduced exactly by reopening the directory (snapshot + event log).
"""

import json
import math

import pytest

from yawnforge.errors import (
    BatchConflictError,
    BatchCoverageError,
    NothingVerifiedError,
    StoreError,
)
from yawnforge.store import (
    BATCH_SIZE,
    EVENTS_NAME,
    SNAPSHOT_NAME,
    AnnotationStore,
    batch_id_for,
)

from conftest import accept_all, checkout_and_submit


class FakeClock:
    def __init__(self, start_ms=1_000_000):
        self.now_ms = start_ms

    def __call__(self):
        return self.now_ms

    def advance(self, seconds):
        self.now_ms += int(seconds * 1000)


def make_rows(n, videos=("va", "vb", "vc")):
    rows = {}
    for i in range(n):
        vid = videos[i % len(videos)]
        fid = f"{vid}_f{i:06d}"
        rows[fid] = {
            "frame_id": fid,
            "video_id": vid,
            "index": i,
            "auto_label": "yawn" if i % 5 == 0 else "no_yawn",
            "confidence": round(0.5 + (i * 37 % 50) / 100.0, 2),
            "mouth_box": [10, 10, 30, 30],
            "crop_path": f"/crops/{fid}.png",
        }
    return rows


def memory_store(n, clock=None, lease_ttl_s=1800, rows=None):
    rows = make_rows(n) if rows is None else rows
    videos = {v: {"video_id": v, "width": 100, "height": 100}
              for v in {r["video_id"] for r in rows.values()}}
    frames = {fid: {"frame_id": fid, "image_path": f"/frames/{fid}.png"}
              for fid in rows}
    return AnnotationStore.create(
        None, "corp", videos, frames, rows, "2026-01-01T00:00:00+00:00",
        clock=clock, lease_ttl_s=lease_ttl_s,
    )


# ---------------- batching ----------------

@pytest.mark.parametrize("n", [0, 1, 63, 64, 65, 128, 129, 300, 1000])
def test_batching_law_spot_checks(n):
    store = memory_store(n)
    batches = store.make_batches()
    assert len(batches) == math.ceil(n / BATCH_SIZE)
    sizes = [len(b["frame_ids"]) for b in batches]
    assert all(s == BATCH_SIZE for s in sizes[:-1])
    if sizes:
        assert 1 <= sizes[-1] <= BATCH_SIZE
    covered = [fid for b in batches for fid in b["frame_ids"]]
    assert len(covered) == n
    assert set(covered) == set(store.annotations)


def test_batch_ids_are_content_hashes():
    store = memory_store(70)
    batches = store.make_batches()
    for b in batches:
        assert b["batch_id"] == batch_id_for(b["frame_ids"])
        assert len(b["batch_id"]) == 16
    # same member list yields the same id on an independent store
    other = memory_store(70)
    other_batches = other.make_batches()
    assert [b["batch_id"] for b in batches] == [b["batch_id"] for b in other_batches]


def test_by_video_ordering_sorts_by_frame_id():
    store = memory_store(100)
    batches = store.make_batches(ordering="by_video")
    got = [fid for b in batches for fid in b["frame_ids"]]
    assert got == sorted(store.annotations)


def test_by_confidence_ordering_sorts_ascending():
    store = memory_store(100)
    batches = store.make_batches(ordering="by_confidence_asc")
    got = [fid for b in batches for fid in b["frame_ids"]]
    keys = [(store.annotations[f]["confidence"], f) for f in got]
    assert keys == sorted(keys)


def test_make_batches_rejects_bad_arguments():
    store = memory_store(5)
    with pytest.raises(StoreError):
        store.make_batches(ordering="by_vibes")
    with pytest.raises(StoreError):
        store.make_batches(batch_size=0)


def test_make_batches_skips_already_batched_and_verified():
    store = memory_store(10)
    first = store.make_batches(batch_size=4)
    assert [len(b["frame_ids"]) for b in first] == [4, 4, 2]
    assert store.make_batches(batch_size=4) == []


def test_custom_batch_size_partition():
    store = memory_store(10)
    batches = store.make_batches(batch_size=3)
    assert [len(b["frame_ids"]) for b in batches] == [3, 3, 3, 1]


# ---------------- leases ----------------

def test_checkout_assigns_first_open_batch_and_is_sticky():
    clock = FakeClock()
    store = memory_store(130, clock=clock)
    r1 = store.checkout("s1", "alice")
    assert r1.status == "ok"
    again = store.checkout("s1", "alice")
    assert again.batch["batch_id"] == r1.batch["batch_id"]
    r2 = store.checkout("s2", "bob")
    assert r2.status == "ok"
    assert r2.batch["batch_id"] != r1.batch["batch_id"]
    r3 = store.checkout("s3", "cara")
    assert r3.status == "ok"
    # three batches (130 -> 64+64+2), all leased now
    r4 = store.checkout("s4", "dave")
    assert r4.status == "locked"
    assert r4.retry_after_s == 1800


def test_lease_expiry_allows_reclaim():
    clock = FakeClock()
    store = memory_store(64, clock=clock, lease_ttl_s=60)
    first = store.checkout("s1", "alice")
    blocked = store.checkout("s2", "bob")
    assert blocked.status == "locked"
    assert blocked.retry_after_s == 60
    clock.advance(61)
    reclaimed = store.checkout("s2", "bob")
    assert reclaimed.status == "ok"
    assert reclaimed.batch["batch_id"] == first.batch["batch_id"]
    # original session lost the lease: submit must now conflict
    with pytest.raises(BatchConflictError, match="another session"):
        store.submit(first.batch["batch_id"], "s1", "alice",
                     accept_all(first.frames))


def test_expired_lease_still_honored_if_unclaimed():
    clock = FakeClock()
    store = memory_store(10, clock=clock, lease_ttl_s=60)
    res = store.checkout("s1", "alice")
    clock.advance(3600)
    out = store.submit(res.batch["batch_id"], "s1", "alice", accept_all(res.frames))
    assert out["idempotent"] is False
    assert store.verified_count == 10


def test_retry_after_reflects_soonest_expiry():
    clock = FakeClock()
    store = memory_store(130, clock=clock, lease_ttl_s=100)
    store.checkout("s1", "alice")
    clock.advance(30)
    store.checkout("s2", "bob")
    clock.advance(30)
    store.checkout("s3", "cara")
    blocked = store.checkout("s4", "dave")
    assert blocked.status == "locked"
    assert blocked.retry_after_s == 40  # s1's lease is the soonest to lapse


def test_checkout_empty_when_everything_submitted():
    store = memory_store(5)
    checkout_and_submit(store, accept_all)
    assert store.checkout("s9", "zoe").status == "empty"


# ---------------- submission ----------------

def test_submit_requires_prior_checkout():
    store = memory_store(5)
    batch = store.make_batches()[0]
    with pytest.raises(BatchConflictError, match="check it out first"):
        store.submit(batch["batch_id"], "s1", "alice",
                     accept_all(store.batch_frames(batch["batch_id"])))


def test_submit_unknown_batch_raises_keyerror():
    store = memory_store(5)
    with pytest.raises(KeyError):
        store.submit("feedfacedeadbeef", "s1", "alice", [])


def test_submit_coverage_missing_and_unknown():
    store = memory_store(5)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    dropped = decisions.pop()
    extra = {"frame_id": "ghost_f000000", "final_label": "yawn"}
    with pytest.raises(BatchCoverageError) as exc_info:
        store.submit(res.batch["batch_id"], "s1", "alice", decisions + [extra])
    assert exc_info.value.missing == [dropped["frame_id"]]
    assert exc_info.value.unknown == ["ghost_f000000"]


def test_submit_rejects_duplicate_and_invalid_decisions():
    store = memory_store(5)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    with pytest.raises(BatchCoverageError, match="duplicate"):
        store.submit(res.batch["batch_id"], "s1", "alice",
                     decisions + [decisions[0]])
    bad = [dict(d) for d in decisions]
    bad[0]["final_label"] = "maybe"
    with pytest.raises(BatchCoverageError, match="invalid final_label"):
        store.submit(res.batch["batch_id"], "s1", "alice", bad)


def test_submit_applies_decisions_and_marks_verified():
    store = memory_store(6)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    decisions[0]["final_label"] = (
        "no_yawn" if decisions[0]["final_label"] == "yawn" else "yawn")
    out = store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    assert out == {"batch_id": res.batch["batch_id"], "verified": 6,
                   "idempotent": False}
    row = store.annotations[decisions[0]["frame_id"]]
    assert row["verified"] is True
    assert row["final_label"] == decisions[0]["final_label"]
    assert row["reviewer"] == "alice"
    assert store.get_batch(res.batch["batch_id"])["status"] == "submitted"


def test_resubmit_identical_is_idempotent_noop():
    store = memory_store(6)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    before = store.state_hash()
    out = store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    assert out["idempotent"] is True
    assert store.verified_count == 6
    assert store.state_hash() == before  # noop event carries no state


def test_resubmit_different_labels_conflicts():
    store = memory_store(6)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    flipped = [dict(d) for d in decisions]
    flipped[0]["final_label"] = (
        "no_yawn" if flipped[0]["final_label"] == "yawn" else "yawn")
    with pytest.raises(BatchConflictError, match="different labels"):
        store.submit(res.batch["batch_id"], "s1", "alice", flipped)


def test_no_face_verdict_accepted_and_clears_mouth_box():
    store = memory_store(6)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    target = decisions[2]["frame_id"]
    decisions[2]["final_label"] = "no_face"
    out = store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    assert out["verified"] == 6
    row = store.annotations[target]
    assert row["verified"] is True
    assert row["final_label"] == "no_face"
    assert row["mouth_box"] is None
    assert row["auto_label"] in ("yawn", "no_yawn")  # machine label untouched


def test_confirming_auto_no_face_frames_submits():
    # detector misses land in batches; confirming them must not dead-end
    rows = make_rows(8)
    for i, row in enumerate(rows.values()):
        if i % 2:
            row.update(auto_label="no_face", confidence=0.0, mouth_box=None)
    store = memory_store(8, rows=rows)
    res = store.checkout("s1", "alice")
    out = store.submit(res.batch["batch_id"], "s1", "alice",
                       accept_all(res.frames))
    assert out == {"batch_id": res.batch["batch_id"], "verified": 8,
                   "idempotent": False}
    assert store.label_counts()["no_face"] == 4


def test_verified_count_monotone_over_operations():
    clock = FakeClock()
    store = memory_store(150, clock=clock, lease_ttl_s=60)
    seen = [store.verified_count]
    for session in ("s1", "s2", "s3"):
        res = store.checkout(session, "rev")
        assert res.status == "ok"
        store.submit(res.batch["batch_id"], session, "rev", accept_all(res.frames))
        seen.append(store.verified_count)
        clock.advance(10)
    assert seen == sorted(seen)
    assert seen[-1] == 150


# ---------------- persistence and replay ----------------

def test_reopen_reproduces_live_state(store_dir):
    clock = FakeClock()
    store = AnnotationStore.open(store_dir, clock=clock)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    decisions[3]["final_label"] = "yawn"
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)  # noop event

    reopened = AnnotationStore.open(store_dir, clock=clock)
    assert reopened.state_hash() == store.state_hash()
    assert reopened.annotations == store.annotations
    assert reopened.batches == store.batches


def test_reopen_replays_no_face_verdicts(store_dir):
    store = AnnotationStore.open(store_dir)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    framed = next(f["frame_id"] for f in res.frames if f["mouth_box"])
    for d in decisions:
        if d["frame_id"] == framed:
            d["final_label"] = "no_face"
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    assert store.annotations[framed]["mouth_box"] is None

    reopened = AnnotationStore.open(store_dir)
    assert reopened.state_hash() == store.state_hash()
    assert reopened.annotations[framed]["mouth_box"] is None
    # the machine's box survives in the write-once snapshot
    snap = json.loads((store_dir / SNAPSHOT_NAME).read_text(encoding="utf-8"))
    assert snap["annotations"][framed]["mouth_box"] is not None


def test_snapshot_never_contains_review_outcomes(store_dir):
    store = AnnotationStore.open(store_dir)
    checkout_and_submit(store, accept_all)
    assert store.verified_count == 20
    snap = json.loads((store_dir / SNAPSHOT_NAME).read_text(encoding="utf-8"))
    for row in snap["annotations"].values():
        assert "final_label" not in row
        assert "verified" not in row
    # dropping the log rolls state back to the pure machine pass
    (store_dir / EVENTS_NAME).unlink()
    fresh = AnnotationStore.open(store_dir)
    assert fresh.verified_count == 0
    assert fresh.batches == []


def test_create_refuses_existing_event_log(store_dir):
    store = AnnotationStore.open(store_dir)
    checkout_and_submit(store, accept_all)
    with pytest.raises(StoreError, match="existing event log"):
        AnnotationStore.create(
            store_dir, "corp2", {}, {}, {}, "2026-01-01T00:00:00+00:00")


def test_corrupt_event_line_rejected(store_dir):
    store = AnnotationStore.open(store_dir)
    checkout_and_submit(store, accept_all)
    with open(store_dir / EVENTS_NAME, "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(StoreError, match="corrupt event log line"):
        AnnotationStore.open(store_dir)


def test_event_seq_gap_rejected(store_dir):
    store = AnnotationStore.open(store_dir)
    checkout_and_submit(store, accept_all)
    path = store_dir / EVENTS_NAME
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    path.write_text("\n".join([lines[0], lines[-1]]) + "\n", encoding="utf-8")
    with pytest.raises(StoreError, match="gap"):
        AnnotationStore.open(store_dir)


def test_auto_labels_write_once():
    store = memory_store(5)
    fid = next(iter(store.annotations))
    row = dict(make_rows(5)[fid])
    row["auto_label"] = "no_face"
    with pytest.raises(StoreError, match="write-once"):
        store.extend_annotations({fid: row})
    # identical re-add is a no-op, new frames extend
    rows = make_rows(7)
    added = store.extend_annotations(rows)
    assert added == 2
    assert len(store.annotations) == 7


def test_invalid_auto_rows_rejected():
    rows = make_rows(1)
    fid = next(iter(rows))
    bad_label = dict(rows[fid], auto_label="open_mouth")
    with pytest.raises(StoreError, match="auto_label"):
        AnnotationStore.create(None, "c", {}, {}, {fid: bad_label}, "t")
    bad_conf = dict(rows[fid], confidence=1.5)
    with pytest.raises(StoreError, match="confidence"):
        AnnotationStore.create(None, "c", {}, {}, {fid: bad_conf}, "t")
    with pytest.raises(StoreError, match="!= row id"):
        AnnotationStore.create(None, "c", {}, {}, {"other": rows[fid]}, "t")


def test_open_missing_directory_raises(tmp_path):
    with pytest.raises(StoreError, match="missing"):
        AnnotationStore.open(tmp_path / "void")


# ---------------- reporting ----------------

def test_agreement_requires_verified_frames():
    store = memory_store(5)
    with pytest.raises(NothingVerifiedError):
        store.agreement_report()


def test_agreement_counts_and_rates():
    store = memory_store(10)  # yawn at indices 0 and 5 (va_f000000, vc_f000005)
    res = store.checkout("s1", "alice")
    decisions = []
    for f in res.frames:
        label = f["auto_label"]
        if f["frame_id"] == "va_f000000":
            label = "no_yawn"  # reject one machine yawn -> fp
        if f["frame_id"] == "va_f000003":
            label = "yawn"  # machine missed this one -> fn
        decisions.append({"frame_id": f["frame_id"], "final_label": label})
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    rep = store.agreement_report()
    assert rep["verified"] == 10
    assert rep["agree"] == 8
    assert rep["rate"] == pytest.approx(0.8)
    assert rep["fp"] == 1
    assert rep["fn"] == 1
    assert rep["pairs"]["yawn->no_yawn"] == 1
    assert rep["pairs"]["no_yawn->yawn"] == 1
    assert sum(rep["pairs"].values()) == 10
    assert set(rep["per_video"]) == {"va", "vb", "vc"}


def test_progress_totals_and_buckets():
    clock = FakeClock()
    store = memory_store(130, clock=clock)
    store.make_batches()
    store.checkout("s1", "alice")
    p = store.progress()
    assert p["total_frames"] == 130
    assert p["auto"] + p["verified"] == 130
    assert p["verified"] == 0
    assert p["batches"] == {"pending": 2, "locked": 1, "submitted": 0}
    assert p["agreement_rate"] is None
    res = store.checkout("s1", "alice")
    store.submit(res.batch["batch_id"], "s1", "alice", accept_all(res.frames))
    p = store.progress()
    assert p["verified"] == 64
    assert p["auto"] == 66
    assert p["batches"]["submitted"] == 1
    assert p["agreement_rate"] == pytest.approx(1.0)
    assert sum(v["frames"] for v in p["per_video"].values()) == 130


def test_label_counts_effective_vs_auto():
    store = memory_store(5)
    res = store.checkout("s1", "alice")
    decisions = accept_all(res.frames)
    for d in decisions:
        d["final_label"] = "yawn"
    store.submit(res.batch["batch_id"], "s1", "alice", decisions)
    assert store.label_counts(effective=True) == {"yawn": 5}
    assert store.label_counts(effective=False) == {"no_yawn": 4, "yawn": 1}


def test_read_only_queries_do_not_mutate_state():
    store = memory_store(20)
    store.make_batches()
    before = store.state_hash()
    store.progress()
    store.label_counts()
    store.batch_frames(store.batches[0]["batch_id"])
    with pytest.raises(NothingVerifiedError):
        store.agreement_report()
    assert store.state_hash() == before


def test_batch_frames_returns_copies():
    store = memory_store(5)
    batch = store.make_batches()[0]
    frames = store.batch_frames(batch["batch_id"])
    frames[0]["auto_label"] = "tampered"
    assert store.annotations[frames[0]["frame_id"]]["auto_label"] != "tampered"
