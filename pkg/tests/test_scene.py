import math

import numpy as np
import pytest

from maptwin.covis import Frame
from maptwin.scene import (Box, FrameBatch, Pose, SlotConfig, VisibilityModel, WalkParams, _reflect,
                           frustum_mask, generate_scene, jaccard, load_trace, make_slot_frames, save_trace,
                           select_keyframes, step_pose, visible_points)

STILL = WalkParams(step=0.0, turn=0.0, margin=0.0, steer=0.0)


def test_generate_scene_basics():
    one = generate_scene(1, seed=3)
    assert one.n_points == 1 and Box().contains(one.points[0])
    a, b = generate_scene(50, seed=9), generate_scene(50, seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    s = generate_scene(500, Box((0, 0, 0), (10, 10, 3)), seed=1)
    assert all(s.bounds.contains(p) for p in s.points)


def test_generate_scene_rejects_bad_input():
    with pytest.raises(ValueError):
        generate_scene(0)
    with pytest.raises(ValueError):
        Box((0, 0, 0), (1, 0, 1))


def test_scene_points_read_only():
    s = generate_scene(5)
    with pytest.raises(ValueError):
        s.points[0, 0] = 1.0


def test_step_pose_identity_when_still():
    p = Pose((1.0, 2.0, 1.5), 0.3)
    assert step_pose(p, STILL, Box(), np.random.default_rng(0)) == p


def test_reflection_arithmetic():
    assert _reflect(10.3, 0.0, 10.0) == pytest.approx((9.7, True))
    assert _reflect(-0.25, 0.0, 10.0) == pytest.approx((0.25, True))
    assert _reflect(4.0, 0.0, 10.0) == (4.0, False)


def test_step_pose_reflects_at_wall():
    walk = WalkParams(step=0.5, turn=0.0, margin=0.0, steer=0.0)
    p = Pose((9.99, 5.0, 1.5), 0.0)
    q = step_pose(p, walk, Box(), np.random.default_rng(1))
    draws = np.random.default_rng(1)
    draws.random()                      # turn draw (scaled by zero)
    d = 0.5 * draws.random()
    assert q.position[0] == pytest.approx(2 * 10.0 - (9.99 + d))
    assert q.position[0] <= 10.0


def test_long_walk_stays_inside():
    rng = np.random.default_rng(5)
    box = Box()
    walk = WalkParams(step=0.4, turn=0.5, margin=0.5)
    p = Pose((5.0, 5.0, 1.5), 0.0)
    for _ in range(10_000):
        p = step_pose(p, walk, box, rng)
        assert box.contains(p.position)
        assert -math.pi <= p.yaw < math.pi


def test_visibility_examples():
    s = generate_scene(3, seed=0)
    pts = np.array([[4.0, 5.0, 1.5], [2.0, 5.0, 1.5], [5.0, 8.0, 1.5]])
    s = type(s)(pts, s.bounds, 0)
    v = VisibilityModel(fov=0.5, max_range=4.0, detect_prob=1.0)
    got = visible_points(s, Pose((2.5, 5.0, 1.5), 0.0), v, np.random.default_rng(0))
    assert 0 in got                     # straight ahead at half range
    assert 1 not in got                 # behind
    assert 2 not in got                 # far off-axis


def test_detect_prob_one_equals_frustum():
    s = generate_scene(300, seed=2)
    v = VisibilityModel(detect_prob=1.0)
    p = Pose((5.0, 5.0, 1.5), 1.0)
    got = visible_points(s, p, v, np.random.default_rng(0))
    assert got == frozenset(np.flatnonzero(frustum_mask(s, p, v)).tolist())


def test_visibility_monotone_in_range_and_fov():
    s = generate_scene(400, seed=4)
    p = Pose((3.0, 4.0, 1.5), -0.7)
    small = visible_points(s, p, VisibilityModel(0.3, 3.0, 1.0), np.random.default_rng(0))
    wide = visible_points(s, p, VisibilityModel(0.6, 3.0, 1.0), np.random.default_rng(0))
    far = visible_points(s, p, VisibilityModel(0.6, 7.0, 1.0), np.random.default_rng(0))
    assert small <= wide <= far


def test_visibility_model_validation():
    for bad in ({"fov": 0.0}, {"fov": 4.0}, {"max_range": 0.0}, {"detect_prob": 0.0}):
        with pytest.raises(ValueError):
            VisibilityModel(**bad)


def test_select_keyframes_rules():
    same = [Frame(i, 0, {1, 2, 3}) for i in range(4)]
    assert [f.frame_id for f in select_keyframes(same)] == [0]
    disjoint = [Frame(i, 0, {i}) for i in range(4)]
    assert len(select_keyframes(disjoint)) == 4
    # Jaccard exactly 0.7 (7 shared of 10) is not below the threshold
    a = Frame(0, 0, set(range(10)))
    b = Frame(1, 0, set(range(7)))
    assert jaccard(a.points, b.points) == pytest.approx(0.7)
    assert [f.frame_id for f in select_keyframes([a, b], 0.7)] == [0]
    with pytest.raises(ValueError):
        select_keyframes([])


def test_make_slot_frames_counts_and_ids():
    s = generate_scene(400, seed=0)
    cfg = SlotConfig(frames_per_slot=60)
    rng = np.random.default_rng
    batch, end = make_slot_frames(s, Pose((5, 5, 1.5), 0.0), cfg, 3, 100, rng(1), rng(2))
    assert len(batch.frames) == 60 and batch.slot == 3
    assert batch.frame_ids() == list(range(100, 160))
    assert batch.keyframes and batch.frames[0].is_keyframe
    assert all(max(f.points, default=0) < 400 for f in batch.frames)
    single, _ = make_slot_frames(s, end, SlotConfig(frames_per_slot=1), 4, 160, rng(1), rng(2))
    assert single.frames[0].is_keyframe


def test_static_full_detection_gives_one_keyframe():
    s = generate_scene(400, seed=0)
    cfg = SlotConfig(frames_per_slot=10, walk=STILL, visibility=VisibilityModel(detect_prob=1.0))
    rng = np.random.default_rng
    batch, _ = make_slot_frames(s, Pose((5, 5, 1.5), 0.0), cfg, 1, 0, rng(0), rng(0))
    assert len({f.points for f in batch.frames}) == 1
    assert len(batch.keyframes) == 1


def test_trace_roundtrip(tmp_path):
    s = generate_scene(200, seed=1)
    rng = np.random.default_rng
    cfg = SlotConfig(frames_per_slot=5)
    pose, batches = Pose((5, 5, 1.5), 0.0), []
    for t in range(3):
        b, pose = make_slot_frames(s, pose, cfg, t, 5 * t, rng(t), rng(10 + t))
        batches.append(b)
    path = tmp_path / "trace.txt"
    save_trace(batches, path, 200)
    loaded, n = load_trace(path)
    assert n == 200 and loaded == batches
    again = tmp_path / "again.txt"
    save_trace(loaded, again, 200)
    assert again.read_bytes() == path.read_bytes()


def test_trace_empty_and_empty_frame(tmp_path):
    path = tmp_path / "t.txt"
    save_trace([], path, 10)
    assert path.read_text() == "maptwin-trace v1 n_points=10\n"
    assert load_trace(path) == ([], 10)
    b = FrameBatch(0, (Frame(0, 0, set(), True),))
    save_trace([b], path, 10)
    assert load_trace(path)[0] == [b]


@pytest.mark.parametrize("body, needle", [
    ("0 1 1 -3,4", "line 2"),
    ("0 1 1 4,99", "line 2"),
    ("0 1 2 4", "flag"),
    ("0 1 1", "fields"),
    ("0 1 1 4\n0 1 0 5", "duplicate"),
])
def test_trace_errors_name_the_line(tmp_path, body, needle):
    path = tmp_path / "bad.txt"
    path.write_text("maptwin-trace v1 n_points=10\n" + body + "\n")
    with pytest.raises(ValueError, match=needle):
        load_trace(path)


def test_trace_requires_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 1 1 4\n")
    with pytest.raises(ValueError, match="header"):
        load_trace(path)
