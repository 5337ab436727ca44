"""Face-box and mouth-crop geometry against brute-force oracles.

The mouth-box oracle recomputes floor/ceil/margin/clamp from the raw lip
coordinates with no shared code; the suppression oracle is the O(n^2)
keep-set definition applied literally.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yawnforge import geometry
from yawnforge.errors import (
    BackendError,
    DegenerateLipExtentError,
    InputImageError,
)
from yawnforge.geometry import FaceBox, LandmarkSet, MouthBox

LIP = geometry.lip_indices()


def landmarks_with_lips(lip_xy: np.ndarray, fill=(500.0, 500.0)) -> LandmarkSet:
    """Mesh whose non-lip points sit far away so extrema come from lips only."""
    pts = np.full((geometry.MESH_POINT_COUNT, 3), 0.0)
    pts[:, 0] = fill[0]
    pts[:, 1] = fill[1]
    pts[LIP, 0] = lip_xy[:, 0]
    pts[LIP, 1] = lip_xy[:, 1]
    return LandmarkSet(points=pts)


def oracle_mouth_box(lip_xy, margin, w, h):
    min_x, min_y = lip_xy.min(axis=0)
    max_x, max_y = lip_xy.max(axis=0)
    x0 = max(0, min(math.floor(min_x) - margin, w - 1))
    y0 = max(0, min(math.floor(min_y) - margin, h - 1))
    x1 = max(0, min(math.ceil(max_x) + margin, w))
    y1 = max(0, min(math.ceil(max_y) + margin, h))
    return x0, y0, x1, y1


# ---------------- FaceBox / IoU ----------------

def test_face_box_validation():
    with pytest.raises(ValueError):
        FaceBox(10, 10, 10, 20, 0.5)
    with pytest.raises(ValueError):
        FaceBox(10, 10, 20, 20, 1.5)
    box = FaceBox(0, 0, 4, 5, 0.9)
    assert box.area == 20


def test_iou_known_values():
    a = FaceBox(0, 0, 10, 10, 1.0)
    assert geometry.iou(a, FaceBox(0, 0, 10, 10, 0.5)) == pytest.approx(1.0)
    assert geometry.iou(a, FaceBox(20, 20, 30, 30, 0.5)) == 0.0
    # 5x10 overlap over (100 + 100 - 50)
    assert geometry.iou(a, FaceBox(5, 0, 15, 10, 0.5)) == pytest.approx(50 / 150)
    # edge-touching boxes do not overlap
    assert geometry.iou(a, FaceBox(10, 0, 20, 10, 0.5)) == 0.0


def test_dilated_grows_symmetrically():
    box = FaceBox(10, 20, 30, 60, 0.7)
    grown = box.dilated(0.25)
    assert (grown.x0, grown.y0, grown.x1, grown.y1) == (5, 10, 35, 70)
    assert grown.score == box.score


# ---------------- NMS ----------------

def oracle_nms(boxes, thr):
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept = []
    for i in order:
        if all(geometry.iou(boxes[i], boxes[j]) < thr for j in kept):
            kept.append(i)
    return [boxes[i] for i in kept]


def random_boxes(rng, n):
    out = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, 80, 2)
        w, h = rng.uniform(4, 40, 2)
        score = round(float(rng.uniform(0, 1)), 2)  # coarse so ties happen
        out.append(FaceBox(x0, y0, x0 + w, y0 + h, score))
    return out


def test_nms_against_reference_500_random_sets():
    rng = np.random.default_rng(42)
    for _ in range(500):
        boxes = random_boxes(rng, int(rng.integers(0, 21)))
        thr = float(rng.uniform(0.1, 0.9))
        assert geometry.nms(boxes, thr) == oracle_nms(boxes, thr)


def test_nms_survivors_mutually_below_threshold():
    rng = np.random.default_rng(7)
    for _ in range(100):
        boxes = random_boxes(rng, 15)
        thr = 0.45
        kept = geometry.nms(boxes, thr)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert geometry.iou(a, b) < thr


def test_nms_keeps_highest_scorer_and_breaks_ties_by_index():
    a = FaceBox(0, 0, 10, 10, 0.9)
    b = FaceBox(1, 1, 11, 11, 0.9)  # same score, heavy overlap, later index
    c = FaceBox(50, 50, 60, 60, 0.3)
    assert geometry.nms([a, b, c], 0.4) == [a, c]
    assert geometry.nms([b, a, c], 0.4) == [b, c]


def test_nms_empty_and_threshold_one_degenerate_cases():
    assert geometry.nms([], 0.5) == []
    boxes = [FaceBox(0, 0, 10, 10, 0.9), FaceBox(0, 0, 10, 10, 0.8)]
    # identical boxes: IoU == 1.0 is not < 1.0, so even threshold 1.0 suppresses
    assert geometry.nms(boxes, 1.0) == [boxes[0]]


# ---------------- primary face ----------------

def test_select_primary_face_prefers_area_then_score():
    small_high = FaceBox(0, 0, 10, 10, 0.99)
    big_low = FaceBox(20, 20, 50, 50, 0.55)
    assert geometry.select_primary_face([small_high, big_low]) is big_low

    same_area_a = FaceBox(0, 0, 10, 10, 0.7)
    same_area_b = FaceBox(30, 30, 40, 40, 0.9)
    assert geometry.select_primary_face([same_area_a, same_area_b]) is same_area_b


def test_select_primary_face_order_independent():
    rng = np.random.default_rng(3)
    boxes = random_boxes(rng, 8)
    chosen = geometry.select_primary_face(boxes)
    for _ in range(10):
        perm = [boxes[i] for i in rng.permutation(len(boxes))]
        assert geometry.select_primary_face(perm) == chosen


def test_select_primary_face_empty():
    assert geometry.select_primary_face([]) is None


# ---------------- landmark sets ----------------

def test_landmark_set_shape_enforced():
    with pytest.raises(BackendError):
        LandmarkSet(points=np.zeros((467, 3)))
    with pytest.raises(BackendError):
        LandmarkSet(points=np.zeros((468, 2)))
    bad = np.zeros((468, 3))
    bad[5, 0] = np.nan
    with pytest.raises(BackendError):
        LandmarkSet(points=bad)


def test_lip_indices_well_formed():
    assert len(LIP) == 40
    assert len(set(LIP)) == 40
    assert all(0 <= i < geometry.MESH_POINT_COUNT for i in LIP)


def test_lip_points_selects_requested_rows():
    pts = np.arange(468 * 3, dtype=float).reshape(468, 3)
    ls = LandmarkSet(points=pts)
    got = ls.lip_points([0, 5])
    assert got.tolist() == [[0.0, 1.0], [15.0, 16.0]]


# ---------------- mouth box ----------------

def test_mouth_bbox_documented_clamp_example():
    # lip extent (100..140, 200..220) inside 640x480 with 10px margin
    lip = np.zeros((40, 2))
    lip[:, 0] = np.linspace(100, 140, 40)
    lip[:, 1] = np.linspace(200, 220, 40)
    box = geometry.mouth_bbox(landmarks_with_lips(lip, fill=(120, 210)),
                              margin_px=10, frame_w=640, frame_h=480)
    assert box.as_tuple() == (90, 190, 150, 230)


def test_mouth_bbox_clamps_at_frame_origin():
    lip = np.zeros((40, 2))
    lip[:, 0] = np.linspace(2, 30, 40)
    lip[:, 1] = np.linspace(3, 40, 40)
    box = geometry.mouth_bbox(landmarks_with_lips(lip, fill=(15, 20)),
                              margin_px=10, frame_w=640, frame_h=480)
    assert box.as_tuple() == (0, 0, 40, 50)


def test_mouth_bbox_may_touch_far_edge():
    lip = np.zeros((40, 2))
    lip[:, 0] = np.linspace(600, 635, 40)
    lip[:, 1] = np.linspace(440, 475, 40)
    box = geometry.mouth_bbox(landmarks_with_lips(lip, fill=(620, 460)),
                              margin_px=10, frame_w=640, frame_h=480)
    assert box.x1 == 640 and box.y1 == 480
    assert box.x0 == 590 and box.y0 == 430


def test_mouth_bbox_degenerate_extent_raises():
    lip = np.zeros((40, 2))
    lip[:, 0] = 100.0  # zero x spread
    lip[:, 1] = np.linspace(10, 30, 40)
    with pytest.raises(DegenerateLipExtentError):
        geometry.mouth_bbox(landmarks_with_lips(lip, fill=(100, 20)),
                            margin_px=10, frame_w=640, frame_h=480)


def test_mouth_bbox_rejects_bad_arguments():
    lip = np.zeros((40, 2))
    lip[:, 0] = np.linspace(10, 30, 40)
    lip[:, 1] = np.linspace(10, 30, 40)
    lm = landmarks_with_lips(lip, fill=(20, 20))
    with pytest.raises(ValueError):
        geometry.mouth_bbox(lm, margin_px=-1, frame_w=100, frame_h=100)
    with pytest.raises(ValueError):
        geometry.mouth_bbox(lm, margin_px=10, frame_w=0, frame_h=100)


def test_mouth_bbox_1000_random_sets_match_bruteforce():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        w = int(rng.integers(64, 1280))
        h = int(rng.integers(64, 960))
        lip = np.column_stack([
            rng.uniform(-20, w + 20, 40),
            rng.uniform(-20, h + 20, 40),
        ])
        if np.ptp(lip[:, 0]) <= 0 or np.ptp(lip[:, 1]) <= 0:
            continue
        lm = landmarks_with_lips(lip, fill=(w / 2, h / 2))
        expected = oracle_mouth_box(lip, 10, w, h)
        if expected[0] >= expected[2] or expected[1] >= expected[3]:
            with pytest.raises(DegenerateLipExtentError):
                geometry.mouth_bbox(lm, margin_px=10, frame_w=w, frame_h=h)
            continue
        box = geometry.mouth_bbox(lm, margin_px=10, frame_w=w, frame_h=h)
        assert box.as_tuple() == expected


def test_mouth_bbox_translation_equivariance_1000_shifts():
    """Away from the frame border, shifting the lips by integers shifts the box."""
    rng = np.random.default_rng(99)
    w, h = 2000, 2000
    base = np.column_stack([rng.uniform(500, 560, 40), rng.uniform(500, 540, 40)])
    ref = geometry.mouth_bbox(landmarks_with_lips(base, fill=(530, 520)),
                              margin_px=10, frame_w=w, frame_h=h)
    for _ in range(1000):
        dx = int(rng.integers(-400, 401))
        dy = int(rng.integers(-400, 401))
        shifted = base + [dx, dy]
        box = geometry.mouth_bbox(landmarks_with_lips(shifted, fill=(530 + dx, 520 + dy)),
                                  margin_px=10, frame_w=w, frame_h=h)
        assert box.as_tuple() == (ref.x0 + dx, ref.y0 + dy, ref.x1 + dx, ref.y1 + dy)


@settings(max_examples=60, deadline=None)
@given(
    xs=st.lists(st.floats(min_value=-50, max_value=700, allow_nan=False),
                min_size=40, max_size=40),
    ys=st.lists(st.floats(min_value=-50, max_value=520, allow_nan=False),
                min_size=40, max_size=40),
    margin=st.integers(min_value=0, max_value=30),
)
def test_mouth_bbox_property_matches_oracle(xs, ys, margin):
    lip = np.column_stack([xs, ys])
    lm = landmarks_with_lips(lip, fill=(320, 240))
    expected = oracle_mouth_box(lip, margin, 640, 480)
    degenerate_extent = np.ptp(lip[:, 0]) <= 0 or np.ptp(lip[:, 1]) <= 0
    collapsed = expected[0] >= expected[2] or expected[1] >= expected[3]
    if degenerate_extent or collapsed:
        with pytest.raises(DegenerateLipExtentError):
            geometry.mouth_bbox(lm, margin_px=margin, frame_w=640, frame_h=480)
        return
    box = geometry.mouth_bbox(lm, margin_px=margin, frame_w=640, frame_h=480)
    assert box.as_tuple() == expected
    assert 0 <= box.x0 < box.x1 <= 640
    assert 0 <= box.y0 < box.y1 <= 480


# ---------------- cropping ----------------

def test_crop_image_extracts_exact_window():
    frame = np.arange(100 * 120 * 3, dtype=np.uint8).reshape(100, 120, 3)
    box = MouthBox(10, 20, 30, 50)
    crop = geometry.crop_image(frame, box)
    assert crop.shape == (30, 20, 3)
    assert np.array_equal(crop, frame[20:50, 10:30])


def test_crop_image_rejects_empty_inputs():
    with pytest.raises(InputImageError):
        geometry.crop_image(np.empty((0, 0, 3), dtype=np.uint8), MouthBox(0, 0, 5, 5))
    frame = np.zeros((10, 10, 3), dtype=np.uint8)
    with pytest.raises(InputImageError):
        geometry.crop_image(frame, MouthBox(20, 20, 30, 30))


def test_mouth_box_validation():
    with pytest.raises(ValueError):
        MouthBox(5, 5, 5, 10)
    with pytest.raises(ValueError):
        MouthBox(0, 0, 5, 5, margin_px=-2)
    assert MouthBox(1, 2, 5, 9).width == 4
    assert MouthBox(1, 2, 5, 9).height == 7
