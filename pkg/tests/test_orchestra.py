import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codedmarl import checkpoint, coding
from codedmarl.maddpg import Hyper, NetSpec, init_all
from codedmarl.mpe import EnvConfig, EnvKind
from codedmarl.orchestra import (
    ComputeCostModel,
    EventQueue,
    NeverDecodable,
    ReplayBuffer,
    SimTransport,
    StragglerModel,
    TrainingConfig,
    collect_episodes,
    earliest_decodable_time,
    run_iteration,
    run_training,
    smooth,
)

ENV2 = EnvConfig(EnvKind.COOP_NAV, 2, 0, 2, max_episode_length=10)
ENV3 = EnvConfig(EnvKind.COOP_NAV, 3, 0, 3, max_episode_length=10)
SMALL = Hyper(batch_size=8, buffer_size=500)


def filled(env: EnvConfig, hidden=(8, 8), episodes=2):
    spec = NetSpec(env.obs_dims(), hidden)
    theta = init_all(spec, 0)
    buf = ReplayBuffer(500, spec.obs_dims)
    collect_episodes(theta, spec, env, episodes, buf, env_seed=1, noise_scale=0.3)
    return spec, theta, buf


def dummy_transition(buf: ReplayBuffer, value: float):
    m = buf.n_agents
    obs = [np.full(o.shape[1], value) for o in buf._obs]
    buf.add(obs, np.zeros((m, 2)), np.full(m, value), obs)


# ----- buffer and collection -------------------------------------------------


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(10, (3, 3))
    for v in range(15):
        dummy_transition(buf, float(v))
    assert len(buf) == 10
    assert buf.rewards_in_order()[:, 0].tolist() == [float(v) for v in range(5, 15)]


def test_buffer_sample_without_replacement_and_seeded():
    buf = ReplayBuffer(20, (2,))
    for v in range(20):
        dummy_transition(buf, float(v))
    a = buf.sample(20, 3)
    assert sorted(a.rewards[:, 0].tolist()) == [float(v) for v in range(20)]
    assert np.array_equal(buf.sample(5, [1, 2]).rewards, buf.sample(5, [1, 2]).rewards)
    with pytest.raises(ValueError):
        buf.sample(21, 0)


def test_buffer_rejects_zero_capacity():
    with pytest.raises(ValueError):
        ReplayBuffer(0, (2,))


def test_collect_zero_episodes_leaves_buffer():
    spec, theta, buf = filled(ENV2)
    before = buf.digest()
    assert collect_episodes(theta, spec, ENV2, 0, buf, env_seed=1) == []
    assert buf.digest() == before


def test_collect_appends_episode_length_transitions():
    spec, theta, buf = filled(ENV2, episodes=3)
    assert len(buf) == 3 * ENV2.max_episode_length


def test_collect_deterministic_digest():
    assert filled(ENV3)[2].digest() == filled(ENV3)[2].digest()
    spec, theta, _ = filled(ENV3)
    other = ReplayBuffer(500, spec.obs_dims)
    collect_episodes(theta, spec, ENV3, 2, other, env_seed=99, noise_scale=0.3)
    assert other.digest() != filled(ENV3)[2].digest()


def test_collect_totals_match_buffer_rewards():
    spec, theta, _ = filled(ENV2)
    buf = ReplayBuffer(100, spec.obs_dims)
    totals = collect_episodes(theta, spec, ENV2, 2, buf, env_seed=5)
    r = buf.rewards_in_order()
    np.testing.assert_allclose(totals[0], r[:10].sum(axis=0))
    np.testing.assert_allclose(totals[1], r[10:].sum(axis=0))


# ----- straggler, cost, events -----------------------------------------------


def test_straggler_pick_seeded_uniform():
    sm = StragglerModel(2, 1.0, seed=5)
    assert sm.pick(3, range(6)) == sm.pick(3, range(6))
    counts = np.zeros(6)
    for it in range(3000):
        picked = sm.pick(it, list(range(6)))
        assert len(set(picked)) == 2
        counts[picked] += 1
    np.testing.assert_allclose(counts / 3000, 2 / 6, atol=0.04)


def test_straggler_k_capped_and_restricted_to_candidates():
    sm = StragglerModel(10, 1.0)
    assert sm.pick(0, [1, 4]) == [1, 4]
    assert StragglerModel(0, 5.0).pick(0, range(4)) == []
    with pytest.raises(ValueError):
        StragglerModel(-1, 0.0)
    with pytest.raises(ValueError):
        StragglerModel(1, -1.0)


def test_cost_model():
    assert ComputeCostModel(1.0, 0.5).finish_time(3) == 2.5
    with pytest.raises(ValueError):
        ComputeCostModel(-1.0, 0.0)


def test_event_queue_orders_by_time_then_id():
    q = EventQueue()
    q.schedule(2.0, 1)
    q.schedule(1.0, 3)
    q.schedule(1.0, 0)
    assert [q.pop()[:2] for _ in range(2)] == [(1.0, 0), (1.0, 3)]
    assert [e[1] for e in q.drain()] == [1] and len(q) == 0


# ----- run_iteration ---------------------------------------------------------


def iterate(c, k, t_s, base=1.0, per_agent=0.0, env=ENV2, iteration=0, transport=None):
    spec, theta, buf = filled(env)
    return run_iteration(
        c, theta, buf, StragglerModel(k, t_s, seed=0), ComputeCostModel(base, per_agent),
        spec, SMALL, iteration=iteration, transport=transport,
    )


def test_uncoded_waits_for_straggler():
    _, trace = iterate(coding.build_uncoded(2, 2), k=1, t_s=10)
    assert trace.round_time == 11.0 and trace.decode_ok
    assert set(trace.decode_set) == {0, 1}


def test_mds_skips_one_straggler():
    _, trace = iterate(coding.build_mds(3, 2), k=1, t_s=10)
    assert trace.round_time == 1.0
    assert len(trace.decode_set) == 2 and not set(trace.decode_set) & set(trace.stragglers)


def test_mds_beyond_tolerance_waits():
    _, trace = iterate(coding.build_mds(3, 2), k=2, t_s=10)
    assert trace.round_time == 11.0


def test_trace_fields_consistent():
    c = coding.build_mds(5, 3)
    _, trace = iterate(c, k=2, t_s=3, per_agent=0.1, env=ENV3)
    assert set(trace.decode_set) <= {j for j, t in trace.arrival_times.items() if t <= trace.round_time}
    assert trace.round_time == earliest_decodable_time(c, trace.arrival_times)
    for j, t in trace.arrival_times.items():
        assert t == pytest.approx(1.0 + 0.1 * c.load(j) + (3 if j in trace.stragglers else 0))


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from(["mds", "random_sparse", "replication", "ldpc"]),
    st.lists(st.floats(0, 5, allow_nan=False), min_size=6, max_size=6),
)
def test_earliest_decodable_optimality(scheme, delays):
    # brute force over every subset reachable by a time threshold, N <= 8
    c = {
        "mds": coding.build_mds(6, 3),
        "random_sparse": coding.build_random_sparse(6, 3, 0.6, 1),
        "replication": coding.build_replication(6, 3),
        "ldpc": coding.build_ldpc(6, 3, 3),
    }[scheme]
    sim = SimTransport(ComputeCostModel(0.5, 0.1))
    arrivals = sim.arrival_times(c, dict(enumerate(delays)))
    best = min(
        max(arrivals[j] for j in subset)
        for r in range(1, 7)
        for subset in itertools.combinations(range(6), r)
        if coding.is_decodable(c, subset)
    )
    spec, theta, buf = filled(ENV3, hidden=(4,))
    out = sim.round(c, theta, buf.sample(8, 0), 0, dict(enumerate(delays)), spec, SMALL)
    assert out.round_time == best
    arrived_by_then = {j for j, t in arrivals.items() if t <= best}
    assert set(out.decode_set) <= arrived_by_then
    assert set(out.cancelled) == set(arrivals) - set(out.decode_set)


def test_uncoded_flat_in_k():
    c = coding.build_uncoded(3, 3)
    times = {iterate(c, k=k, t_s=4.0, env=ENV3)[1].round_time for k in range(1, 4)}
    assert times == {5.0}


def test_mds_threshold():
    c = coding.build_mds(5, 3)
    base = iterate(c, k=0, t_s=0.0, env=ENV3, per_agent=0.1)[1].round_time
    for t_s in [0.5, 2.0, 7.0]:
        for k in [1, 2]:
            assert iterate(c, k=k, t_s=t_s, env=ENV3, per_agent=0.1)[1].round_time == base
        assert iterate(c, k=3, t_s=t_s, env=ENV3, per_agent=0.1)[1].round_time == pytest.approx(base + t_s)


def test_never_decodable():
    entries = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    c = coding.AssignmentMatrix(entries, coding.Scheme.RANDOM_SPARSE)
    with pytest.raises(NeverDecodable):
        iterate(c, k=0, t_s=0)


def test_shared_updates_do_not_change_result():
    c = coding.build_mds(4, 2)
    a, ta = iterate(c, k=1, t_s=2, transport=SimTransport(ComputeCostModel(1.0, 0.0), share_updates=True))
    b, tb = iterate(c, k=1, t_s=2, transport=SimTransport(ComputeCostModel(1.0, 0.0), share_updates=False))
    assert np.array_equal(a, b) and ta == tb


def test_late_responses_do_not_alter_result():
    # a decode from the timely rows equals a decode that also sees the cancelled row
    c = coding.build_mds(3, 2)
    spec, theta, buf = filled(ENV2)
    sim = SimTransport(ComputeCostModel(1.0, 0.0))
    out = sim.round(c, theta, buf.sample(8, 0), 0, {2: 10.0}, spec, SMALL)
    assert out.cancelled == (2,) and out.decode_set == (0, 1)
    assert 2 not in out.responses
    late = dict(out.responses)
    late[2] = SimTransport(share_updates=False).round(
        c, theta, buf.sample(8, 0), 0, {0: 10.0}, spec, SMALL
    ).responses[2]
    np.testing.assert_allclose(coding.decode(c, late), out.theta, rtol=0, atol=1e-9)


# ----- run_training ----------------------------------------------------------


def config(assignment, iters=3, **kw):
    return TrainingConfig(
        env=ENV2, assignment=assignment, straggler=StragglerModel(kw.pop("k", 0), kw.pop("t_s", 0.0)),
        hyper=SMALL, hidden=(8, 8), max_iteration=iters, **kw,
    )


def test_zero_iterations_empty():
    res = run_training(config(coding.build_mds(3, 2), iters=0))
    assert res.traces == [] and res.history == []


def test_training_bitwise_deterministic():
    a = run_training(config(coding.build_mds(4, 2), iters=4, k=1, t_s=1.0), record_params=True)
    b = run_training(config(coding.build_mds(4, 2), iters=4, k=1, t_s=1.0), record_params=True)
    assert a.traces == b.traces
    assert all(np.array_equal(x, y) for x, y in zip(a.history, b.history))
    assert len(a.traces) == 4 and [t.iteration for t in a.traces] == [0, 1, 2, 3]


def test_centralized_parity():
    central = run_training(config(None, iters=6), record_params=True)
    coded = run_training(config(coding.build_mds(5, 2), iters=6, k=1, t_s=2.0), record_params=True)
    for x, y in zip(central.history, coded.history):
        assert np.max(np.abs(x - y)) <= 1e-5
    assert [t.mean_reward for t in central.traces] == pytest.approx(
        [t.mean_reward for t in coded.traces], abs=1e-5
    )


def test_smooth_trailing_mean():
    assert smooth([1.0, 3.0, 5.0, 7.0], 2) == [1.0, 2.0, 4.0, 6.0]
    assert smooth([], 3) == []


def test_checkpoint_written_on_completion(tmp_path):
    path = tmp_path / "final.ckpt"
    res = run_training(config(coding.build_uncoded(2, 2), iters=2), checkpoint_path=path)
    theta, header = checkpoint.load(path)
    assert np.array_equal(theta, res.theta) and header["iterations"] == 2


def test_keyboard_interrupt_writes_checkpoint(tmp_path):
    class Interrupting(SimTransport):
        calls = 0

        def round(self, *args, **kwargs):
            self.calls += 1
            if self.calls == 3:
                raise KeyboardInterrupt
            return super().round(*args, **kwargs)

    path = tmp_path / "interrupt.ckpt"
    with pytest.raises(KeyboardInterrupt):
        run_training(config(coding.build_mds(3, 2), iters=10), transport=Interrupting(), checkpoint_path=path)
    _, header = checkpoint.load(path)
    assert header["interrupted"] is True
