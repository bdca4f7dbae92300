"""Event synthesis tests against a scalar brute-force oracle."""

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtrack.config import SensorConfig
from evtrack.errors import ContractViolation, SensorError
from evtrack.sensors import (
    EventFrame,
    EventStream,
    FrameQueue,
    IntensityFrame,
    Observation,
    SensorState,
    generate_events,
    lin_log,
    push_observation,
    stack_events,
    write_event_frame_pgm,
    write_events_csv,
    write_intensity_pgm,
)


def brute_force_events(prev, nxt, t0, t1, ref, c, eps):
    """Scalar per-pixel crossing enumeration; independent of the vector path."""
    h, w = prev.shape
    out = []
    new_ref = ref.copy()
    for yy in range(h):
        for xx in range(w):
            l0 = math.log(prev[yy, xx] + eps)
            l1 = math.log(nxt[yy, xx] + eps)
            r = ref[yy, xx]
            if l1 - r >= c:
                n, s = math.floor((l1 - r) / c), 1
            elif l1 - r <= -c:
                n, s = math.floor((r - l1) / c), -1
            else:
                n, s = 0, 0
            for k in range(1, n + 1):
                lvl = r + s * (k * c)
                frac = (lvl - l0) / (l1 - l0)
                te = t0 + frac * (t1 - t0)
                te = min(max(te, t0), float(np.nextafter(t1, -np.inf)))
                out.append((te, xx, yy, s))
            new_ref[yy, xx] = r + s * n * c
    out.sort(key=lambda e: (e[0], e[2], e[1], e[3]))
    return out, new_ref


def _as_tuples(stream):
    return sorted(
        ((float(t), int(x), int(y), int(p)) for t, x, y, p in stream),
        key=lambda e: (e[0], e[2], e[1], e[3]),
    )


def test_step_of_three_and_a_half_thresholds_gives_three_events():
    cfg = SensorConfig(contrast_threshold=0.2)
    prev = np.full((4, 4), 0.2)
    # raise one pixel by exactly 3.5 * C in log space
    l0 = math.log(0.2 + cfg.log_eps)
    nxt = prev.copy()
    nxt[1, 2] = math.exp(l0 + 3.5 * cfg.contrast_threshold) - cfg.log_eps
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 0.0, 0.005, state, cfg)
    assert len(events) == 3
    assert np.all(events.p == 1)
    assert np.all(events.x == 2) and np.all(events.y == 1)
    # the residual 0.5 C stays in the reference
    l1 = math.log(nxt[1, 2] + cfg.log_eps)
    assert l1 - state.ref[1, 2] == pytest.approx(0.5 * cfg.contrast_threshold)


def test_matches_brute_force_on_random_pairs():
    cfg = SensorConfig()
    rng = np.random.default_rng(0)
    for trial in range(50):
        prev = rng.uniform(0.0, 1.0, size=(16, 16))
        nxt = rng.uniform(0.0, 1.0, size=(16, 16))
        state = SensorState.from_image(prev, cfg)
        ref0 = state.ref.copy()
        stream = generate_events(prev, nxt, 1.0, 1.005, state, cfg)
        expected, ref_expected = brute_force_events(
            prev, nxt, 1.0, 1.005, ref0, cfg.contrast_threshold, cfg.log_eps
        )
        got = _as_tuples(stream)
        assert len(got) == len(expected), f"trial {trial}"
        for g, e in zip(got, expected):
            assert g[1:] == e[1:]
            assert abs(g[0] - e[0]) < 1e-12
        np.testing.assert_allclose(state.ref, ref_expected, atol=1e-12)


def test_matches_brute_force_threaded_over_a_sequence():
    cfg = SensorConfig()
    rng = np.random.default_rng(7)
    frames = [rng.uniform(0.0, 1.0, size=(12, 12)) for _ in range(6)]
    state = SensorState.from_image(frames[0], cfg)
    ref_oracle = state.ref.copy()
    for i in range(5):
        t0, t1 = i * 0.005, (i + 1) * 0.005
        stream = generate_events(frames[i], frames[i + 1], t0, t1, state, cfg)
        expected, ref_oracle = brute_force_events(
            frames[i], frames[i + 1], t0, t1, ref_oracle,
            cfg.contrast_threshold, cfg.log_eps,
        )
        got = _as_tuples(stream)
        assert [g[1:] for g in got] == [e[1:] for e in expected]
        np.testing.assert_allclose(state.ref, ref_oracle, atol=1e-12)


def test_window_splitting_conserves_events():
    # generating A->B in one call equals A->M->B with threaded state, where
    # M is the log-midpoint image: same counts, polarities, and timestamps.
    cfg = SensorConfig()
    rng = np.random.default_rng(3)
    prev = rng.uniform(0.0, 1.0, size=(16, 16))
    nxt = rng.uniform(0.0, 1.0, size=(16, 16))
    mid = np.exp(0.5 * (lin_log(prev, cfg.log_eps) + lin_log(nxt, cfg.log_eps)))
    mid = np.maximum(mid - cfg.log_eps, 0.0)

    whole_state = SensorState.from_image(prev, cfg)
    whole = _as_tuples(generate_events(prev, nxt, 0.0, 0.01, whole_state, cfg))

    split_state = SensorState.from_image(prev, cfg)
    first = generate_events(prev, mid, 0.0, 0.005, split_state, cfg)
    second = generate_events(mid, nxt, 0.005, 0.01, split_state, cfg)
    split = _as_tuples(first) + _as_tuples(second)
    split.sort(key=lambda e: (e[0], e[2], e[1], e[3]))

    assert len(whole) == len(split)
    assert [e[1:] for e in whole] == [e[1:] for e in split]
    for a, b in zip(whole, split):
        assert abs(a[0] - b[0]) < 1e-9
    np.testing.assert_allclose(whole_state.ref, split_state.ref, atol=1e-9)


@given(seed=st.integers(0, 10_000), splits=st.integers(2, 5))
@settings(max_examples=25, deadline=None)
def test_window_splitting_conservation_property(seed, splits):
    cfg = SensorConfig()
    rng = np.random.default_rng(seed)
    prev = rng.uniform(0.0, 1.0, size=(8, 8))
    nxt = rng.uniform(0.0, 1.0, size=(8, 8))

    whole_state = SensorState.from_image(prev, cfg)
    whole = generate_events(prev, nxt, 0.0, 0.01, whole_state, cfg)

    l0, l1 = lin_log(prev, cfg.log_eps), lin_log(nxt, cfg.log_eps)
    split_state = SensorState.from_image(prev, cfg)
    total = 0
    img_a = prev
    for j in range(1, splits + 1):
        frac = j / splits
        if j == splits:
            img_b = nxt
        else:
            img_b = np.maximum(
                np.exp(l0 + frac * (l1 - l0)) - cfg.log_eps, 0.0
            )
        stream = generate_events(
            img_a, img_b, 0.01 * (j - 1) / splits, 0.01 * j / splits,
            split_state, cfg,
        )
        total += len(stream)
        img_a = img_b
    assert total == len(whole)
    np.testing.assert_allclose(split_state.ref, whole_state.ref, atol=1e-9)


def test_uniform_darkening_emits_only_negative_polarity():
    cfg = SensorConfig()
    prev = np.full((8, 8), 0.8)
    nxt = np.full((8, 8), 0.3)
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 0.0, 0.005, state, cfg)
    assert len(events) > 0
    assert np.all(events.p == -1)


def test_single_crossing_timestamp_is_the_analytic_one():
    cfg = SensorConfig(contrast_threshold=0.2)
    prev = np.full((4, 4), 0.3)
    nxt = prev.copy()
    l0 = math.log(0.3 + cfg.log_eps)
    nxt[0, 0] = math.exp(l0 + 0.3) - cfg.log_eps  # 1.5 C rise -> one event
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 2.0, 2.01, state, cfg)
    assert len(events) == 1
    # crossing of ref + C happens at fraction C / (1.5 C) = 2/3 of the window
    assert events.t[0] == pytest.approx(2.0 + 0.01 * (0.2 / 0.3), abs=1e-12)


def test_timestamps_sorted_and_inside_half_open_window():
    cfg = SensorConfig()
    rng = np.random.default_rng(11)
    prev = rng.uniform(0.0, 1.0, size=(16, 16))
    nxt = rng.uniform(0.0, 1.0, size=(16, 16))
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 0.5, 0.505, state, cfg)
    assert len(events) > 0
    assert np.all(np.diff(events.t) >= 0)
    assert events.t.min() >= 0.5
    assert events.t.max() < 0.505


def test_refractory_drops_rapid_repeats():
    cfg = SensorConfig(contrast_threshold=0.2, refractory_s=0.0015)
    prev = np.full((4, 4), 0.2)
    nxt = prev.copy()
    l0 = math.log(0.2 + cfg.log_eps)
    nxt[2, 2] = math.exp(l0 + 5 * 0.2) - cfg.log_eps  # 5 crossings in 5 ms
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 0.0, 0.005, state, cfg)
    # crossings land at 1, 2, 3, 4, 5 ms; a 1.5 ms dead time keeps 1, 3, 5
    assert len(events) == 3
    # the reference still advances by the full five thresholds
    l1 = math.log(nxt[2, 2] + cfg.log_eps)
    assert abs(l1 - state.ref[2, 2]) < cfg.contrast_threshold


def test_noise_events_do_not_move_the_reference():
    cfg = SensorConfig(noise_rate_hz=2000.0)
    img = np.full((8, 8), 0.5)
    state = SensorState.from_image(img, cfg)
    ref0 = state.ref.copy()
    rng = np.random.default_rng(0)
    events = generate_events(img, img, 0.0, 0.01, state, cfg, rng=rng)
    assert len(events) > 0  # expectation is 2000 * 0.01 * 64 = 1280
    np.testing.assert_array_equal(state.ref, ref0)
    assert events.t.max() < 0.01
    # without an rng or with zero rate, the stream is purely deterministic
    quiet = generate_events(img, img, 0.0, 0.01, state, SensorConfig())
    assert len(quiet) == 0


def test_shape_mismatch_and_stale_reference_raise():
    cfg = SensorConfig()
    state = SensorState.from_image(np.full((8, 8), 0.5), cfg)
    with pytest.raises(SensorError):
        generate_events(np.zeros((8, 8)), np.zeros((4, 4)), 0, 0.01, state, cfg)
    with pytest.raises(SensorError):
        generate_events(np.zeros((4, 4)), np.zeros((4, 4)), 0, 0.01, state, cfg)
    # a hand-built stale reference (far from L0 = L1) must be detected
    img = np.full((8, 8), 0.5)
    stale = SensorState(
        ref=lin_log(img, cfg.log_eps) + 1.0, last_event_t=np.full((8, 8), -np.inf)
    )
    with pytest.raises(SensorError):
        generate_events(img, img, 0.0, 0.01, stale, cfg)


# ---------------------------------------------------------------------------
# stacking and the observation queue
# ---------------------------------------------------------------------------


def test_stacking_counts_and_conservation():
    cfg = SensorConfig()
    rng = np.random.default_rng(5)
    prev = rng.uniform(0.0, 1.0, size=(16, 16))
    nxt = rng.uniform(0.0, 1.0, size=(16, 16))
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, 0.0, cfg.delta_t_s, state, cfg)
    frame = stack_events(events, 0.0, cfg)
    assert frame.counts.shape == (16, 16, 2)
    assert int(frame.counts.sum()) == len(events)
    assert int(frame.counts[:, :, 1].sum()) == int((events.p == 1).sum())
    assert int(frame.counts[:, :, 0].sum()) == int((events.p == -1).sum())
    # spot-check one pixel against direct counting
    yx = (int(events.y[0]), int(events.x[0]))
    direct = int(
        ((events.y == yx[0]) & (events.x == yx[1]) & (events.p == 1)).sum()
    )
    assert int(frame.counts[yx[0], yx[1], 1]) == direct


def test_stacking_rejects_out_of_window_events():
    cfg = SensorConfig()
    events = EventStream([0.0071], [3], [2], [1], width=8, height=8)
    with pytest.raises(ContractViolation):
        stack_events(events, 0.0, cfg)  # window is [0, 0.005)
    ok = stack_events(events, 0.005, cfg)
    assert ok.counts.sum() == 1


def test_boundary_grazing_event_stacks_when_t1_is_t0_plus_dt():
    # The stacker checks timestamps against window_start + delta_t_s, so a
    # caller must derive t1 with that exact float expression; (k+1)*dt can
    # sit one ulp above it and let a clipped final-crossing event escape.
    cfg = SensorConfig(contrast_threshold=0.2)
    dt = cfg.delta_t_s
    t0 = 6 * dt
    assert t0 + dt != 7 * dt  # the ulp gap this test guards against

    prev = np.full((4, 4), 0.3)
    l0 = math.log(0.3 + cfg.log_eps)
    # land exactly on the second crossing level so the last event's
    # timestamp falls on (or is clipped to just below) the window end
    nxt = prev.copy()
    nxt[0, 0] = math.exp(l0 + 2 * cfg.contrast_threshold) - cfg.log_eps
    state = SensorState.from_image(prev, cfg)
    events = generate_events(prev, nxt, t0, t0 + dt, state, cfg)
    assert len(events) == 2
    assert events.t.max() < t0 + dt
    frame = stack_events(events, t0, cfg)  # must not raise
    assert frame.counts.sum() == 2


def test_fresh_queue_pads_with_zero_frames():
    q = FrameQueue(depth=3, height=8, width=8)
    frame = EventFrame.zeros(8, 8, 0.0, 0.005)
    counts = frame.counts.copy()
    counts[1, 1, 1] = 4
    frame = EventFrame(counts=counts, window_start=0.0, window_len=0.005)
    obs = push_observation(q, frame)
    assert isinstance(obs, Observation)
    assert len(obs.frames) == 3
    assert obs.frames[0].counts.sum() == 0
    assert obs.frames[1].counts.sum() == 0
    assert obs.frames[2].counts.sum() == 4  # newest last


def test_queue_is_fifo_and_fixed_depth():
    q = FrameQueue(depth=3, height=4, width=4)
    frames = []
    for i in range(5):
        counts = np.zeros((4, 4, 2), dtype=np.uint16)
        counts[0, 0, 1] = i + 1
        frames.append(EventFrame(counts=counts, window_start=i * 0.005, window_len=0.005))
    for f in frames:
        obs = q.push(f)
    marks = [int(f.counts[0, 0, 1]) for f in obs.frames]
    assert marks == [3, 4, 5]


def test_observation_arrays_for_both_modes():
    q = FrameQueue(depth=3, height=8, width=8)
    counts = np.zeros((8, 8, 2), dtype=np.uint16)
    counts[2, 3, 0] = 7
    obs = q.push(EventFrame(counts=counts, window_start=0.0, window_len=0.005))
    arr = obs.to_array()
    assert arr.shape == (3, 2, 8, 8) and arr.dtype == np.float32
    assert arr[2, 0, 2, 3] == 7.0

    qrgb = FrameQueue(depth=3, height=8, width=8, mode="rgb")
    img = np.full((8, 8), 0.25, dtype=np.float32)
    obs2 = qrgb.push(IntensityFrame(image=img, t=0.02))
    arr2 = obs2.to_array()
    assert arr2.shape == (3, 2, 8, 8)
    np.testing.assert_array_equal(arr2[2, 0], arr2[2, 1])
    assert arr2[2, 0, 0, 0] == pytest.approx(0.25)
    with pytest.raises(ContractViolation):
        qrgb.push(EventFrame.zeros(8, 8, 0.0, 0.005))


def test_static_rgb_scene_gives_identical_frames():
    q = FrameQueue(depth=3, height=4, width=4, mode="rgb")
    img = np.full((4, 4), 0.6, dtype=np.float32)
    for i in range(3):
        obs = q.push(IntensityFrame(image=img.copy(), t=0.02 * i))
    arr = obs.to_array()
    np.testing.assert_array_equal(arr[0], arr[1])
    np.testing.assert_array_equal(arr[1], arr[2])


def test_debug_dumps_round_trip(tmp_path):
    cfg = SensorConfig()
    events = EventStream([0.001, 0.002], [1, 2], [3, 4], [1, -1], 8, 8)
    csv_path = os.path.join(tmp_path, "events.csv")
    write_events_csv(events, csv_path)
    lines = open(csv_path, encoding="utf-8").read().strip().splitlines()
    assert lines[0] == "t,x,y,p"
    assert len(lines) == 3 and lines[1].endswith(",1,3,1")

    frame = stack_events(events, 0.0, cfg)
    pgm_path = os.path.join(tmp_path, "frame.pgm")
    write_event_frame_pgm(frame, pgm_path)
    content = open(pgm_path, encoding="utf-8").read().split()
    assert content[0] == "P2" and content[1] == "8" and content[2] == "8"

    img_path = os.path.join(tmp_path, "img.pgm")
    write_intensity_pgm(np.full((4, 4), 0.5), img_path)
    vals = open(img_path, encoding="utf-8").read().split()[4:]
    assert all(v == "127" for v in vals)
