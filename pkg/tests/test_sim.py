import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtrack.boxes import BBoxN
from evtrack.sim import (
    NS,
    SceneObject,
    SceneSpec,
    Trajectory,
    emit_events,
    load_dataset,
    make_dataset,
    object_center,
    random_scene,
    render_scene,
    save_dataset,
    target_box,
)

MS = 1_000_000


def disk(x, y, size=12.0, offset=0.6, **tr):
    return SceneObject("disk", size, offset, Trajectory(start=(x, y), **({"kind": "linear"} | tr)))


def test_static_scene_render_is_time_invariant():
    spec = SceneSpec(target=disk(40.0, 50.0), distractors=(disk(90.0, 90.0),))
    a = render_scene(spec, 0)
    assert np.array_equal(a, render_scene(spec, 700 * MS))
    assert np.array_equal(a, render_scene(spec, 0))


def test_render_time_out_of_range():
    spec = SceneSpec(target=disk(40.0, 50.0), duration_ns=100 * MS)
    with pytest.raises(ValueError):
        render_scene(spec, 101 * MS)


def test_disk_adds_its_offset():
    with_target = SceneSpec(target=disk(60.0, 60.0, size=20.0, offset=0.7))
    background = dataclasses.replace(with_target, target=None)
    diff = render_scene(with_target, 0) - render_scene(background, 0)
    yy, xx = np.mgrid[0:128, 0:128] + 0.5
    r = np.hypot(xx - 60.0, yy - 60.0)
    assert np.allclose(diff[r < 9.0], 0.7, atol=1e-12)
    assert np.all(diff[r > 11.0] == 0.0)


def test_constant_scene_without_noise_is_silent():
    spec = SceneSpec(target=disk(40.0, 50.0), noise_rate=0.0, duration_ns=200 * MS)
    assert len(emit_events(spec).stream) == 0


def test_noise_count_follows_poisson():
    spec = SceneSpec(noise_rate=2.0, duration_ns=500 * MS)
    n = len(emit_events(spec).stream)
    mean = 2.0 * 128 * 128 * 0.5
    assert abs(n - mean) < 5 * np.sqrt(mean)


def test_edge_of_two_thresholds_emits_two_events_per_pixel():
    # a 20 px wide bar taller than the frame moving 1 px per render step
    bar = SceneObject("square", 20.0, 0.3, Trajectory("linear", (30.0, 64.0), velocity=(1000.0, 0.0)), height=200.0)
    spec = SceneSpec(
        target=bar, duration_ns=50 * MS, contrast_threshold=0.15, checker_contrast=0.0, noise_rate=0.0
    )
    ev = emit_events(spec).stream.events
    pos, neg = ev[ev["p"] > 0], ev[ev["p"] < 0]
    counts = np.zeros((128, 128), dtype=int)
    np.add.at(counts, (pos["y"], pos["x"]), 1)
    assert np.all(counts[:, 40:90] == 2)
    assert counts.sum() == 2 * 50 * 128
    ncounts = np.zeros((128, 128), dtype=int)
    np.add.at(ncounts, (neg["y"], neg["x"]), 1)
    assert np.all(ncounts[:, 20:70] == 2) and ncounts.sum() == 2 * 50 * 128


def test_event_timestamps_fall_inside_their_render_step():
    bar = SceneObject("square", 20.0, 0.3, Trajectory("linear", (30.0, 64.0), velocity=(1000.0, 0.0)), height=200.0)
    spec = SceneSpec(target=bar, duration_ns=20 * MS, checker_contrast=0.0, noise_rate=0.0)
    ev = emit_events(spec).stream.events
    # the right edge reaches column x at step x - 39
    step = ev["x"][ev["p"] > 0].astype(np.int64) - 39
    t = ev["t"][ev["p"] > 0].astype(np.int64)
    assert np.all((t > (step - 1) * MS) & (t <= step * MS))
    # the two thresholds sit at half and full contrast, so halfway and at the step end
    assert set(np.unique(t - (step - 1) * MS)) == {MS // 2, MS}


def test_render_rate_must_resolve_motion():
    fast = SceneObject("disk", 10.0, 0.5, Trajectory("sinusoidal", (64.0, 64.0), amplitude=(5.0, 5.0), frequency=600.0))
    with pytest.raises(ValueError):
        SceneSpec(target=fast)
    SceneSpec(target=fast, render_hz=1200.0)


def test_invalid_spec_values():
    with pytest.raises(ValueError):
        SceneSpec(contrast_threshold=0.0)
    with pytest.raises(ValueError):
        SceneSpec(target=disk(40.0, 40.0, size=0.0))


def test_gt_boxes_follow_analytic_trajectory():
    spec = random_scene("plain", 11)
    seq = emit_events(dataclasses.replace(spec, duration_ns=200 * MS))
    assert len(seq.gt_boxes) == 8
    for k, box in enumerate(seq.gt_boxes):
        t = k * spec.window_ns + spec.window_ns // 2
        cx, cy = object_center(spec.target, t / NS, 128, 128, 0.2)
        assert box.cx == pytest.approx(cx / 128, abs=1e-12) and box.cy == pytest.approx(cy / 128, abs=1e-12)
        assert box == target_box(dataclasses.replace(spec, duration_ns=200 * MS), t)


@settings(max_examples=8)
@given(st.integers(0, 2**31))
def test_doubling_contrast_never_reduces_signal(seed):
    spec = dataclasses.replace(random_scene("distractor", seed, width=48, height=48, duration_ns=100 * MS), noise_rate=0.0)

    def doubled(o):
        return dataclasses.replace(o, offset=2 * o.offset)

    strong = dataclasses.replace(
        spec, checker_contrast=2 * spec.checker_contrast,
        target=doubled(spec.target), distractors=tuple(doubled(o) for o in spec.distractors),
    )
    assert len(emit_events(strong).stream) >= len(emit_events(spec).stream)


def test_scenarios_construct_what_they_promise():
    for seed in range(10):
        d = random_scene("distractor", seed)
        assert len(d.distractors) >= 2
        assert all(o.shape == d.target.shape for o in d.distractors)
        assert random_scene("camera_motion", seed).jitter_amplitude > 0
        assert random_scene("plain", seed).distractors == ()
    with pytest.raises(ValueError):
        random_scene("underwater", 0)


def test_dataset_sequences_are_sane(plain_small):
    for seq in plain_small:
        ev = seq.stream.events
        assert np.all(np.diff(ev["t"].astype(np.int64)) >= 0)
        assert np.all(ev["x"] < 128) and np.all(ev["y"] < 128)
        assert len(seq.gt_boxes) == 40
        for b in seq.gt_boxes:
            x0, y0, x1, y1 = b.xyxy()
            assert 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1


def test_dataset_files_are_byte_identical(tmp_path):
    kw = dict(duration_ns=200 * MS)
    a = save_dataset(make_dataset("combined", 2, 5, "val", **kw), tmp_path / "a").parent
    b = save_dataset(make_dataset("combined", 2, 5, "val", **kw), tmp_path / "b").parent
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_splits_do_not_share_scenes():
    kw = dict(duration_ns=100 * MS)
    train = make_dataset("plain", 3, 0, "train", **kw)
    test = make_dataset("plain", 3, 0, "test", **kw)
    assert {s.spec.seed for s in train}.isdisjoint({s.spec.seed for s in test})


def test_dataset_round_trip(tmp_path):
    seqs = make_dataset("distractor", 2, 1, duration_ns=150 * MS)
    back = load_dataset(save_dataset(seqs, tmp_path / "d"))
    for s, r in zip(seqs, back):
        assert np.array_equal(s.stream.events, r.stream.events)
        assert r.gt_boxes == s.gt_boxes and r.spec == s.spec and r.scenario == "distractor"
        assert np.array_equal(r.frames, s.frames)


def test_bad_dataset_arguments():
    with pytest.raises(ValueError):
        make_dataset("plain", 0, 0)
    with pytest.raises(ValueError):
        make_dataset("plain", 1, 0, split="holdout")
