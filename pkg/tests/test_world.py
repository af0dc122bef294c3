import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cooplane.config import BottleneckSchedule, CarFollowingParams, ScenarioConfig
from cooplane.world import (LEFT, NONE, RIGHT, SPEEDUP, World, apply_bottleneck,
                            begin_lane_change, body_overlaps, collision_check,
                            newell_speed, spawn_vehicles, step)

from conftest import quiet_config


# -- spawning -------------------------------------------------------------------

def test_first_spawn_within_jitter_window():
    # departure clock: round(2 s * (1 +- 0.2 U) / 0.1 s) lies in [16, 24]
    firsts = []
    for seed in range(40):
        cfg = ScenarioConfig().replace(**{"spawn.t_up": 2.0, "seed": seed})
        w = World(cfg)
        first = {}
        for t in range(30):
            info = step(w)
            for vid in info.spawned:
                first.setdefault(w.lane[w.index_of(vid)], t)
        assert sorted(first) == [0, 1, 2]
        firsts += list(first.values())
    assert min(firsts) >= 16 and max(firsts) <= 24
    assert len(set(firsts)) > 3


def test_no_jitter_spawns_every_30_steps():
    cfg = ScenarioConfig().replace(**{"spawn.t_up": 3.0, "spawn.jitter": 0.0})
    w = World(cfg)
    times = {k: [] for k in range(3)}
    for t in range(400):
        info = step(w)
        for vid in info.spawned:
            times[int(w.lane[w.index_of(vid)])].append(t)
    for lane, ts in times.items():
        assert ts[0] == 30
        assert set(np.diff(ts)) == {30}


def test_blocked_entry_defers_spawn():
    cfg = ScenarioConfig().replace(**{"spawn.t_up": 1.0, "spawn.jitter": 0.0,
                                      "road.lane_count": 2})
    w = World(cfg)
    w.add_vehicle(5.0, 0, 0.0, 20.0)
    w.step_index = 10
    made = spawn_vehicles(w)
    lanes = [int(w.lane[w.index_of(v)]) for v in made]
    assert lanes == [1]
    assert w.pending_v_exp.keys() == {0}
    # clear the entrance: the deferred draw spawns on the next try
    w.x[0] = 100.0
    v_exp, v0 = w.pending_v_exp[0]
    w.step_index = 11
    (vid,) = spawn_vehicles(w)
    i = w.index_of(vid)
    assert (w.lane[i], w.x[i], w.v_exp[i], w.v[i]) == (0, 0.0, v_exp, v0)


def test_spawned_speeds_in_range():
    w = World(ScenarioConfig().replace(**{"seed": 3}))
    for _ in range(2000):
        step(w)
    assert np.all((w.v_exp >= 40 / 3.6) & (w.v_exp <= 110 / 3.6))


# -- car following ----------------------------------------------------------------

def test_newell_examples():
    p = CarFollowingParams()
    assert newell_speed(25.0, 25.0, np.inf, p) == 25.0
    env = 20 * (1 - np.exp(-1.0))
    assert newell_speed(19.9, 20.0, 20.0, p) == pytest.approx(env, abs=1e-12)
    assert env == pytest.approx(12.642, abs=5e-4)
    assert newell_speed(10.0, 20.0, 20.0, p, speedup=True) == pytest.approx(10.4, abs=1e-12)
    assert newell_speed(10.0, 20.0, 20.0 * 0.5 / 1.5, p) == 0.0


@given(st.floats(11.2, 30.5), st.floats(0.0, 500.0), st.floats(1e-3, 50.0))
def test_newell_envelope_monotone(v_exp, gap, extra):
    p = CarFollowingParams()
    lo = newell_speed(v_exp, v_exp, gap, p)
    hi = newell_speed(v_exp, v_exp, gap + extra, p)
    assert 0.0 <= lo <= hi <= v_exp


def test_newell_envelope_approaches_v_exp():
    p = CarFollowingParams()
    assert newell_speed(30.0, 30.0, 1e4, p) == pytest.approx(30.0, abs=1e-9)


# -- lane changes -------------------------------------------------------------------

def test_left_from_leftmost_rejected():
    w = World(quiet_config())
    w.add_vehicle(100.0, 0, 20.0, 20.0)
    assert not begin_lane_change(w, 0, LEFT)
    assert w.lc_target[0] == -1 and w.vy[0] == 0.0
    w2 = World(quiet_config())
    w2.add_vehicle(100.0, 2, 20.0, 20.0)
    assert not begin_lane_change(w2, 0, RIGHT)


def test_lateral_ramp_40_steps():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    step(w, [RIGHT])
    assert w.vy[0] == pytest.approx(0.875, abs=1e-12)
    assert w.lc_steps[0] == 39
    for k in range(38):
        step(w, [NONE])
        assert w.lane[0] == 1 and w.lc_target[0] == 2
        assert abs(w.y[0] - 3.5) < 3.5
    step(w, [NONE])
    assert w.lane[0] == 2 and w.lc_target[0] == -1
    assert w.y[0] == 7.0 and w.vy[0] == 0.0


def test_lockout_during_maneuver():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    info = step(w, [LEFT])
    assert info.changed[0]
    for k in range(9):
        step(w, [NONE])
    assert not begin_lane_change(w, 0, LEFT)
    info = step(w, [RIGHT])
    assert not info.changed[0]
    assert w.lc_target[0] == 0


def test_lane_change_blocked_by_neighbour():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    w.add_vehicle(101.0, 0, 20.0, 20.0)
    assert not begin_lane_change(w, 0, LEFT)


# -- safety layer ----------------------------------------------------------------

def test_collision_cap_11():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    w.add_vehicle(119.0, 1, 12.0, 20.0)      # bumper gap 15 <= 18
    out = collision_check(w, np.array([20.0, 12.0]))
    assert out[0] == pytest.approx(11.0)
    assert out[1] == 12.0


def test_collision_far_no_override():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    w.add_vehicle(204.0, 1, 12.0, 20.0)
    out = collision_check(w, np.array([20.0, 12.0]))
    assert out[0] == 20.0


def test_collision_cap_clamped_at_zero():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 5.0, 20.0)
    w.add_vehicle(110.0, 1, 0.5, 20.0)
    out = collision_check(w, np.array([5.0, 0.5]))
    assert out[0] == 0.0


def test_changing_vehicle_checked_in_both_lanes():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    begin_lane_change(w, 0, LEFT)
    w.add_vehicle(119.0, 0, 12.0, 20.0)      # leader in the target lane only
    w.add_vehicle(150.0, 1, 20.0, 20.0)
    out = collision_check(w, np.array([20.0, 12.0, 20.0]))
    assert out[0] == pytest.approx(11.0)


def test_single_vehicle_moves_2m():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    step(w, {0: NONE})
    assert w.x[0] == 102.0


def test_unknown_id_rejected():
    w = World(quiet_config())
    w.add_vehicle(100.0, 1, 20.0, 20.0)
    with pytest.raises(KeyError):
        step(w, {5: NONE})


def test_follower_in_trigger_zone_never_passes_leader():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w = World(quiet_config())
        w.add_vehicle(100.0, 1, rng.uniform(15, 30), 30.0)
        w.add_vehicle(100.0 + rng.uniform(4.5, 20), 1, rng.uniform(0, 10), rng.uniform(12, 20))
        for _ in range(300):
            step(w, [SPEEDUP] * len(w))
            if len(w) < 2:
                break
            assert w.x[0] <= w.x[1] - 4.0


# -- bottleneck ----------------------------------------------------------------

def _zone_world(n, p_step=None):
    cfg = quiet_config()
    w = World(cfg, rng=np.random.default_rng(7))
    for k in range(n):
        w.add_vehicle(1300.0 + (k % 50), k % 3, 10.0, 20.0)
    return w


def test_bottleneck_half_ratio():
    w = _zone_world(10000)
    sched = BottleneckSchedule(start_step=0, end_step=2)     # p(1) = 0.5
    stuck = apply_bottleneck(w, sched, 1)
    assert abs(stuck.mean() - 0.5) <= 0.02


def test_bottleneck_extremes():
    w = _zone_world(200)
    sched = BottleneckSchedule(start_step=0, end_step=1000)
    assert apply_bottleneck(w, sched, 0).all()          # p = 1
    w = _zone_world(200)
    assert not apply_bottleneck(w, sched, 1000).any()   # p = 0
    w = _zone_world(200)
    apply_bottleneck(w, sched, 0)
    assert not apply_bottleneck(w, sched, 1001).any()   # outside the window


def test_held_vehicle_stops_and_redraws():
    cfg = quiet_config(**{"bottleneck.enabled": True, "bottleneck.start_step": 0,
                          "bottleneck.end_step": 10 ** 6})
    w = World(cfg, rng=np.random.default_rng(0))
    w.add_vehicle(1290.0, 1, 10.0, 20.0)
    step(w, [NONE])
    assert w.stuck[0] and w.v[0] == 0.0
    assert w.redraw_step[0] == 100
    for _ in range(150):
        step(w, [NONE])
    assert w.stuck[0] and w.x[0] == 1290.0


# -- invariants over seeded runs -------------------------------------------------

def _random_run(seed, lanes, steps, t_up=2.0):
    cfg = ScenarioConfig().replace(**{"road.lane_count": lanes, "road.road_length": 600.0,
                                      "spawn.t_up": t_up, "seed": seed})
    w = World(cfg)
    rng = np.random.default_rng(seed + 1000)
    for _ in range(steps):
        n_before = len(w)
        x_prev = dict(zip(w.ids.tolist(), w.x.tolist()))
        acts = rng.integers(0, 4, size=len(w))
        info = step(w, acts)
        yield w, info, n_before, x_prev


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 3]), st.sampled_from([1.0, 2.0, 4.0]))
def test_seeded_run_invariants(seed, lanes, t_up):
    lock = {}
    for w, info, n_before, x_prev in _random_run(seed, lanes, 600, t_up):
        assert body_overlaps(w) == 0
        assert len(w) == n_before + len(info.spawned) - len(info.exited)
        assert w.spawned_total - w.exited_total == len(w)
        assert np.all(w.v >= 0) and np.all(w.v <= w.v_exp + 1e-12)
        assert np.all((w.lane >= 0) & (w.lane < lanes))
        assert np.all(np.abs(w.y - 3.5 * w.lane) < 3.5)
        for vid, x in zip(w.ids.tolist(), w.x.tolist()):
            if vid in x_prev:
                assert x >= x_prev[vid]
        # lockout: a second acceptance never happens mid-maneuver
        for vid, tgt in zip(w.ids.tolist(), w.lc_target.tolist()):
            if tgt >= 0:
                lock.setdefault(vid, tgt)
                assert lock[vid] == tgt
            else:
                lock.pop(vid, None)


def test_determinism():
    def trace(seed):
        rows = []
        for w, _, _, _ in _random_run(seed, 3, 400):
            rows.append((w.ids.copy(), w.x.copy(), w.y.copy(), w.v.copy()))
        return rows
    a, b = trace(5), trace(5)
    for ra, rb in zip(a, b):
        for xa, xb in zip(ra, rb):
            assert np.array_equal(xa, xb)
