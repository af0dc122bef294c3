import pytest

from cooplane.config import (ALPHA_SET, BottleneckSchedule, ConfigError, ScenarioConfig,
                             dump_config, load_config, parse_config_text)


def test_defaults_validate():
    cfg = ScenarioConfig().validate()
    assert cfg.road.dt == 0.1
    assert cfg.road.car_length == 4.0
    assert (cfg.safety.a1, cfg.safety.a2, cfg.safety.v_cc) == (2.0, 0.5, 1.0)
    assert cfg.car_following.v_acc == 0.4
    assert cfg.lane_change.t_change == 4.0
    assert cfg.dqn.gamma == 0.9 and cfg.dqn.lr == 0.01 and cfg.dqn.eps_exploit == 0.9
    assert cfg.dqn.target_sync == 500 and cfg.dqn.capacity == 2000
    assert cfg.bottleneck is None


def test_alpha_set():
    assert ALPHA_SET == (0, 1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8, 16, 24, 32, 48)


def test_dump_parse_round_trip():
    cfg = ScenarioConfig().replace(**{"road.lane_count": 4, "spawn.t_up": 3.5,
                                      "reward.alpha": 8, "bottleneck.enabled": True,
                                      "bottleneck.start_step": 10})
    again = parse_config_text(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


def test_load_file_with_comments(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# scenario\nroad.lane_count = 2  # two lanes\nseed = 7\n"
                 "spawn.v_exp_range = [15.0, 20.0]\n")
    cfg = load_config(p)
    assert cfg.road.lane_count == 2 and cfg.seed == 7
    assert cfg.spawn.v_exp_range == (15.0, 20.0)


@pytest.mark.parametrize("key,value,field", [
    ("road.lane_count", 1, "road.lane_count"),
    ("dqn.gamma", 1.0, "dqn.gamma"),
    ("spawn.jitter", 1.0, "spawn.jitter"),
    ("reward.alpha", -1.0, "reward.alpha"),
    ("road.dt", 0.0, "road.dt"),
])
def test_invalid_values_name_field(key, value, field):
    with pytest.raises(ConfigError) as err:
        ScenarioConfig().replace(**{key: value}).validate()
    assert err.value.field == field


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config_text("road.lanes = 3\n")
    assert err.value.field == "road.lanes"
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign\n")


def test_bottleneck_ratio_decays_linearly():
    b = BottleneckSchedule(start_step=100, end_step=300)
    assert b.stuck_ratio(99) == 0.0
    assert b.stuck_ratio(100) == 1.0
    assert b.stuck_ratio(200) == 0.5
    assert b.stuck_ratio(300) == 0.0
    ps = [b.stuck_ratio(t) for t in range(100, 301)]
    assert all(a >= c for a, c in zip(ps, ps[1:]))
