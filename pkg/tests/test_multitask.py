import numpy as np
import pytest

from planrl.errors import ConfigError, UsageError
from planrl.multitask import (RewardScaler, TaskSpec, build_universal, embed,
                              pad_observation, schedule, unpad_action)
from planrl.nn import tensor as T


def _tasks():
    a = TaskSpec("a", obs_dim=3, act_dim=1, action_low=(-1.0,), action_high=(1.0,),
                 embed_index=0)
    b = TaskSpec("b", obs_dim=6, act_dim=2, action_low=(-1.0, -1.0),
                 action_high=(1.0, 1.0), embed_index=1)
    c = TaskSpec("c", obs_dim=4, act_dim=3, action_low=(-2.0, -2.0, -2.0),
                 action_high=(2.0, 2.0, 2.0), embed_index=2)
    return a, b, c


def test_universal_dims_are_maxima():
    a, b, c = _tasks()
    spec = build_universal([a, b, c])
    assert spec.obs_dim == 6
    assert spec.act_dim == 3


def test_masks_are_prefixes():
    a, b, c = _tasks()
    spec = build_universal([a, b, c])
    assert np.array_equal(spec.obs_mask["a"], [True, True, True, False, False, False])
    assert np.array_equal(spec.act_mask["b"], [True, True, False])
    assert np.array_equal(spec.act_mask["c"], [True, True, True])


def test_pad_then_unpad_round_trips():
    a, b, c = _tasks()
    spec = build_universal([a, b, c])
    obs = np.array([0.1, -0.2, 0.3])
    padded = pad_observation(obs, a, spec)
    assert padded.shape == (6,)
    assert np.array_equal(padded[:3], obs)
    assert np.array_equal(padded[3:], np.zeros(3))
    act = np.array([0.5, 9.0, -9.0])
    native = unpad_action(act, b, spec)
    assert np.array_equal(native, np.array([0.5, 1.0]))  # prefix + clamp


def test_unpad_respects_task_specific_bounds():
    a, b, c = _tasks()
    spec = build_universal([a, b, c])
    native = unpad_action(np.array([1.7, -3.0, 0.2]), c, spec)
    assert np.array_equal(native, np.array([1.7, -2.0, 0.2]))


def test_wrong_widths_rejected():
    a, b, c = _tasks()
    spec = build_universal([a, b, c])
    with pytest.raises(UsageError):
        pad_observation(np.zeros(4), a, spec)
    with pytest.raises(UsageError):
        unpad_action(np.zeros(2), a, spec)


def test_duplicate_ids_rejected():
    a, _, _ = _tasks()
    with pytest.raises(ConfigError):
        build_universal([a, a])


def test_schedule_round_robin_counts():
    a, b, c = _tasks()
    d = TaskSpec("d", obs_dim=2, act_dim=1, action_low=(-1.0,), action_high=(1.0,),
                 embed_index=3)
    out = schedule(0, 8, [a, b, c, d])
    counts = {t.task_id: 0 for t in (a, b, c, d)}
    for t in out:
        counts[t.task_id] += 1
    assert counts == {"a": 2, "b": 2, "c": 2, "d": 2}
    out3 = schedule(0, 4, [a, b, c])
    assert [t.task_id for t in out3] == ["a", "b", "c", "a"]


def test_schedule_stable_across_steps():
    a, b, c = _tasks()
    assert [t.task_id for t in schedule(0, 5, [a, b, c])] == \
           [t.task_id for t in schedule(10_000, 5, [a, b, c])]


def test_embedding_rows_distinct_and_gradient_isolated():
    rng = np.random.default_rng(0)
    table = T.Tensor(rng.uniform(-0.25, 0.25, size=(3, 4)), requires_grad=True,
                     name="embed")
    rows = table.data
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.array_equal(rows[i], rows[j])
    # gradients from task-0/1 samples leave row 2 untouched, exactly
    ids = np.array([0, 1, 0])
    with T.Tape() as tape:
        e = embed(table, ids)
        loss = T.tsum(T.mul(e, e))
    g = T.backward(tape, loss, [table])[table]
    assert np.any(g[0] != 0.0) and np.any(g[1] != 0.0)
    assert np.all(g[2] == 0.0)


def test_embed_index_out_of_range():
    table = T.Tensor(np.zeros((2, 4)), requires_grad=True)
    with pytest.raises(UsageError):
        embed(table, 5)


def test_reward_scaler_tracks_and_floors():
    s = RewardScaler(["x", "y"], rate=0.5, floor=1.0)
    assert s.scale("x") == 1.0  # nothing observed yet
    s.update("x", -200.0)
    assert s.scale("x") == 200.0  # first observation initializes
    s.update("x", -100.0)
    assert s.scale("x") == pytest.approx(150.0)
    s.update("y", 0.0)
    assert s.scale("y") == 1.0  # floored for tiny-return tasks
    state = s.state()
    s2 = RewardScaler(["x", "y"])
    s2.load_state(state)
    assert s2.scale("x") == s.scale("x")
