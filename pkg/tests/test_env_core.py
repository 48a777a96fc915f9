import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synklr.env_core import (
    AOHistory,
    AOHStep,
    Trajectory,
    discounted_return,
    empty_encoding,
    encode_aoh,
    encoding_width,
    slot_encoding,
    trajectory_from_bytes,
    trajectory_to_bytes,
    trajectory_to_json,
)
from synklr.hanabi import HanabiEnv, preset
from synklr.learner import UniformRandomPolicy, run_actor


def _random_traj(seed, cfg="hanabi-mini"):
    env = HanabiEnv(preset(cfg))
    pol = UniformRandomPolicy()
    return run_actor(env, [pol, pol], [0.0, 0.0], seed)


@pytest.mark.parametrize("seed", range(20))
def test_return_equals_score(seed):
    traj = _random_traj(seed)
    assert traj.is_terminal
    assert traj.total_return == traj.final_score
    assert discounted_return(traj, 1.0) == pytest.approx(traj.final_score)


def test_discounted_return_matches_direct_sum():
    traj = _random_traj(3)
    g = 0.9
    for t in range(traj.num_turns):
        direct = sum(g ** j * r for j, r in enumerate(traj.rewards[t:]))
        assert discounted_return(traj, g, t) == pytest.approx(direct)
    with pytest.raises(ValueError):
        discounted_return(traj, 0.0)
    with pytest.raises(IndexError):
        discounted_return(traj, 0.9, traj.num_turns)


def test_histories_hold_own_turns_plus_terminal():
    traj = _random_traj(5)
    for p, aoh in enumerate(traj.aoh_per_agent):
        own_turns = (traj.num_turns + (1 - p)) // 2
        assert len(aoh) == own_turns + 1
        assert aoh.steps[-1].action is None
        assert aoh.steps[0].reward is None
        # per-seat rewards partition the common return
        assert sum(aoh.rewards) == pytest.approx(traj.total_return - sum(traj.rewards[: p]))


def test_history_length_and_first_reward_enforced():
    step = AOHStep(b"\x00", b"\x01", 0)
    with pytest.raises(ValueError):
        AOHistory(0, 1, (step,) * 3, max_length=2)
    with pytest.raises(ValueError):
        AOHistory(0, 1, (AOHStep(b"\x00", b"\x01", 0, 1.0),))
    with pytest.raises(ValueError):
        Trajectory((), (1.0, 2.0), None, total_return=5.0)


@pytest.mark.parametrize("seed", range(10))
def test_binary_round_trip(seed):
    traj = _random_traj(seed)
    back = trajectory_from_bytes(trajectory_to_bytes(traj))
    assert back == traj
    assert '"env_id": "hanabi-mini"' in trajectory_to_json(traj)


def test_binary_rejects_garbage():
    data = trajectory_to_bytes(_random_traj(0))
    with pytest.raises(ValueError):
        trajectory_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        trajectory_from_bytes(data + b"\x00")


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.binary(min_size=4, max_size=4), st.integers(0, 2)), min_size=1, max_size=6),
    st.integers(1, 4),
)
def test_aoh_encoding_injective_on_window(frames, horizon):
    # distinct windows must give distinct encodings; the presence bit
    # separates padding from an all-zero observation
    steps = tuple(AOHStep(o, b"\x01\x01\x01", a) for o, a in frames)
    aoh = AOHistory(0, 3, steps)
    enc = encode_aoh(aoh, horizon)
    assert len(enc) == encoding_width(4, 3, horizon)
    window = steps[-horizon:]
    expected = bytes(len(enc) - len(window) * 8) + b"".join(slot_encoding(s.obs, s.action, 3) for s in window)
    assert enc == expected
    shorter = AOHistory(0, 3, steps[1:]) if len(steps) > 1 else None
    if shorter is not None and len(steps) <= horizon:
        assert encode_aoh(shorter, horizon) != enc


def test_all_zero_observation_differs_from_padding():
    z = AOHistory(0, 2, (AOHStep(b"\x00\x00", b"\x01\x01", None),))
    assert encode_aoh(z, 2) != bytes(encoding_width(2, 2, 2))


def test_rewards_are_finite_and_bounded():
    cfg = preset("hanabi-mini")
    rng = random.Random(0)
    for _ in range(50):
        traj = _random_traj(rng.getrandbits(32))
        assert all(math.isfinite(r) for r in traj.rewards)
        assert 0 <= traj.final_score <= cfg.max_score


@pytest.mark.parametrize("cfg", ["hanabi-mini", "hanabi-full"])
def test_replay_reproduces_observations(cfg):
    env = HanabiEnv(preset(cfg))
    pol = UniformRandomPolicy()
    for seed in range(10):
        log = []
        traj = run_actor(env, [pol, pol], [0.0, 0.0], seed, action_log=log)
        env.reset(random.Random(seed).getrandbits(64))
        seen = [[] for _ in range(env.num_players)]
        for player, action in log:
            assert env.current_player == player
            seen[player].append(env.observe(player))
            env.step(action)
        for p, aoh in enumerate(traj.aoh_per_agent):
            assert [s.obs for s in aoh.steps if s.action is not None] == seen[p]
        assert env.final_score() == traj.final_score


def test_empty_history_encodes_as_zeros():
    empty = AOHistory(0, 3)
    assert encode_aoh(empty, 2, obs_size=4) == bytes(encoding_width(4, 3, 2))
    assert encode_aoh(empty, 2, obs_size=4) == empty_encoding(4, 3, 2)
    with pytest.raises(ValueError):
        encode_aoh(empty, 2)
