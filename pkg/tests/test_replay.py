"""Replay buffer vs a plain-list reference model, plus integrity checks."""

import numpy as np
import pytest

from evtrack.errors import ContractViolation
from evtrack.replay import ObsCodec, ReplayBatch, ReplayBuffer

OBS_SHAPE = (2, 2, 4, 4)


def make_buffer(capacity=8, mode="detection", shape=(6,)):
    codec = ObsCodec.for_observation(mode, shape)
    return ReplayBuffer(capacity, codec, priv_dim=3, action_dim=2)


def random_transition(rng, shape=(6,), integer_obs=False):
    if integer_obs:
        obs = rng.integers(0, 20, shape).astype(np.float32)
        nxt = rng.integers(0, 20, shape).astype(np.float32)
    else:
        obs = rng.random(shape).astype(np.float32)
        nxt = rng.random(shape).astype(np.float32)
    return dict(
        obs=obs,
        priv=rng.standard_normal(3).astype(np.float32),
        action=rng.uniform(-1, 1, 2).astype(np.float32),
        reward=float(rng.standard_normal()),
        next_obs=nxt,
        next_priv=rng.standard_normal(3).astype(np.float32),
        done=bool(rng.random() < 0.1),
    )


def test_ring_overwrite_matches_reference_model():
    rng = np.random.default_rng(0)
    cap = 8
    buf = make_buffer(capacity=cap)
    items = [random_transition(rng) for _ in range(27)]
    expected = [None] * cap
    for i, tr in enumerate(items):
        buf.append(**tr)
        expected[i % cap] = tr
    assert len(buf) == cap
    assert buf.total_appended == 27
    for slot in range(cap):
        np.testing.assert_array_equal(buf._obs[slot], expected[slot]["obs"])
        np.testing.assert_array_equal(buf._action[slot], expected[slot]["action"])
        assert buf._reward[slot] == expected[slot]["reward"]
        assert bool(buf._done[slot]) == expected[slot]["done"]
    assert buf.audit() == cap


def test_partial_fill_counts():
    rng = np.random.default_rng(1)
    buf = make_buffer(capacity=10)
    for _ in range(4):
        buf.append(**random_transition(rng))
    assert len(buf) == 4
    assert buf.total_appended == 4
    with pytest.raises(ContractViolation):
        buf.sample(5, rng)
    batch = buf.sample(3, rng)
    assert isinstance(batch, ReplayBatch)
    assert batch.obs.shape == (3, 6)
    assert batch.obs.dtype == np.float32


def test_sampled_rows_come_from_storage():
    rng = np.random.default_rng(2)
    buf = make_buffer(capacity=16)
    items = [random_transition(rng) for _ in range(16)]
    for tr in items:
        buf.append(**tr)
    batch = buf.sample(16, rng)
    stored_rewards = {tr["reward"] for tr in items}
    for r in batch.reward:
        # float32 cast of a stored float64 reward
        assert any(np.float32(sr) == r for sr in stored_rewards)
    for row in batch.obs:
        assert any(np.array_equal(row, tr["obs"]) for tr in items)


def test_uint8_event_codec_round_trips_counts_exactly():
    codec = ObsCodec.for_observation("event", OBS_SHAPE)
    buf = ReplayBuffer(4, codec, priv_dim=3, action_dim=2)
    rng = np.random.default_rng(3)
    tr = random_transition(rng, shape=OBS_SHAPE, integer_obs=True)
    buf.append(**tr)
    batch = buf.sample(1, rng)
    np.testing.assert_array_equal(batch.obs[0], tr["obs"])
    np.testing.assert_array_equal(batch.next_obs[0], tr["next_obs"])


def test_uint8_event_codec_saturates_not_wraps():
    codec = ObsCodec.for_observation("event", (4,))
    enc = codec.encode(np.array([0.0, 254.0, 255.0, 900.0], dtype=np.float32))
    np.testing.assert_array_equal(enc, [0, 254, 255, 255])


def test_rgb_codec_quantization_error_bounded():
    codec = ObsCodec.for_observation("rgb", (64,))
    rng = np.random.default_rng(4)
    obs = rng.random(64).astype(np.float32)
    back = codec.decode(codec.encode(obs))
    assert np.abs(back - obs).max() <= 0.5 / 255 + 1e-7


def test_vector_codec_is_exact():
    codec = ObsCodec.for_observation("detection", (12,))
    obs = np.random.default_rng(5).standard_normal(12).astype(np.float32)
    np.testing.assert_array_equal(codec.decode(codec.encode(obs)), obs)


def test_audit_detects_tampering():
    rng = np.random.default_rng(6)
    buf = make_buffer(capacity=4)
    for _ in range(4):
        buf.append(**random_transition(rng))
    buf.audit()
    buf._reward[2] += 1.0
    with pytest.raises(ContractViolation, match="slot 2"):
        buf.audit()


def test_non_finite_transitions_rejected():
    rng = np.random.default_rng(7)
    buf = make_buffer()
    tr = random_transition(rng)
    tr["reward"] = float("nan")
    with pytest.raises(ContractViolation):
        buf.append(**tr)
    tr = random_transition(rng)
    tr["priv"] = np.array([np.inf, 0, 0], dtype=np.float32)
    with pytest.raises(ContractViolation):
        buf.append(**tr)


def test_shape_mismatch_rejected():
    rng = np.random.default_rng(8)
    buf = make_buffer()
    tr = random_transition(rng, shape=(7,))
    with pytest.raises(ContractViolation):
        buf.append(**tr)


def test_concurrent_append_and_sample():
    import threading

    rng = np.random.default_rng(9)
    buf = make_buffer(capacity=64)
    for _ in range(16):
        buf.append(**random_transition(rng))
    stop = threading.Event()
    errors = []

    def writer():
        wrng = np.random.default_rng(10)
        try:
            for _ in range(2000):
                buf.append(**random_transition(wrng))
        except Exception as e:  # pragma: no cover
            errors.append(e)
        finally:
            stop.set()

    def reader():
        rrng = np.random.default_rng(11)
        try:
            while not stop.is_set():
                batch = buf.sample(8, rrng)
                assert np.all(np.isfinite(batch.obs))
        except Exception as e:  # pragma: no cover
            errors.append(e)

    t1 = threading.Thread(target=writer)
    t2 = threading.Thread(target=reader)
    t1.start(), t2.start()
    t1.join(), t2.join()
    assert not errors
    assert buf.total_appended == 2016
    assert buf.audit() == 64
