"""Scenario configuration: nested dataclasses plus a flat ``section.key = value`` text format."""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from typing import Any, Optional

KMH = 1.0 / 3.6
V_EXP_MIN = 40 * KMH
V_EXP_MAX = 110 * KMH

# α set examined per sweep condition
ALPHA_SET = (0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 32.0, 48.0)


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` holds the dotted key at fault."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(name, message)


@dataclass
class RoadConfig:
    lane_count: int = 3
    road_length: float = 2000.0
    lane_width: float = 3.5
    dt: float = 0.1
    car_length: float = 4.0

    def validate(self, prefix: str = "road") -> None:
        _require(self.lane_count >= 2, f"{prefix}.lane_count", "must be >= 2")
        _require(self.road_length > 0, f"{prefix}.road_length", "must be > 0")
        _require(self.lane_width > 0, f"{prefix}.lane_width", "must be > 0")
        _require(self.dt > 0, f"{prefix}.dt", "must be > 0")
        _require(self.car_length > 0, f"{prefix}.car_length", "must be > 0")


@dataclass
class CarFollowingParams:
    c: float = 1.5
    d: float = -0.5
    v_acc: float = 0.4

    def validate(self, prefix: str = "car_following") -> None:
        _require(self.c > 0, f"{prefix}.c", "must be > 0")
        _require(self.v_acc > 0, f"{prefix}.v_acc", "must be > 0")


@dataclass
class SafetyParams:
    a1: float = 2.0
    a2: float = 0.5
    v_cc: float = 1.0
    enabled: bool = True

    def validate(self, prefix: str = "safety") -> None:
        for name in ("a1", "a2", "v_cc"):
            _require(getattr(self, name) >= 0, f"{prefix}.{name}", "must be >= 0")


@dataclass
class LaneChangeParams:
    t_change: float = 4.0
    lockout: bool = True
    # clearance to target-lane neighbours required to start a maneuver
    min_gap: float = 2.0

    def validate(self, prefix: str = "lane_change") -> None:
        _require(self.t_change > 0, f"{prefix}.t_change", "must be > 0")
        _require(self.min_gap >= 0, f"{prefix}.min_gap", "must be >= 0")


@dataclass
class SpawnConfig:
    t_up: float = 2.0
    jitter: float = 0.2
    v_exp_range: tuple = (V_EXP_MIN, V_EXP_MAX)
    # initial speed = v_exp * U(lo, hi)
    v0_fraction: tuple = (1.0, 1.0)
    # lanes fed at the entrance; empty means all lanes
    lanes: tuple = ()
    # departures wait while this many vehicles are on the road; 0 means no cap
    max_vehicles: int = 0

    def validate(self, prefix: str = "spawn") -> None:
        _require(self.t_up > 0, f"{prefix}.t_up", "must be > 0")
        _require(0 <= self.jitter < 1, f"{prefix}.jitter", "must be in [0, 1)")
        lo, hi = self.v_exp_range
        _require(0 < lo <= hi, f"{prefix}.v_exp_range", "need 0 < lo <= hi")
        flo, fhi = self.v0_fraction
        _require(0 <= flo <= fhi <= 1, f"{prefix}.v0_fraction", "need 0 <= lo <= hi <= 1")
        _require(self.max_vehicles >= 0, f"{prefix}.max_vehicles", "must be >= 0")


@dataclass
class BottleneckSchedule:
    x_bottle: float = 1300.0
    zone_radius: float = 50.0
    start_step: int = 2000
    end_step: int = 13000
    rehold_interval: float = 10.0

    def stuck_ratio(self, step: int) -> float:
        """Linear decay from 1 at ``start_step`` to 0 at ``end_step``; 0 outside."""
        if step < self.start_step or step > self.end_step:
            return 0.0
        span = self.end_step - self.start_step
        if span == 0:
            return 1.0
        return 1.0 - (step - self.start_step) / span

    def active(self, step: int) -> bool:
        return self.start_step <= step <= self.end_step

    def validate(self, prefix: str = "bottleneck") -> None:
        _require(self.zone_radius >= 0, f"{prefix}.zone_radius", "must be >= 0")
        _require(self.end_step >= self.start_step >= 0, f"{prefix}.end_step",
                 "need 0 <= start_step <= end_step")
        _require(self.rehold_interval > 0, f"{prefix}.rehold_interval", "must be > 0")


@dataclass
class RewardParams:
    alpha: float = 0.0
    v_min: float = V_EXP_MIN
    v_max: float = V_EXP_MAX
    q_window: float = 60.0
    q_ref: float = 0.5

    def validate(self, prefix: str = "reward") -> None:
        _require(self.v_max > self.v_min, f"{prefix}.v_max", "must exceed v_min")
        _require(self.alpha >= 0, f"{prefix}.alpha", "must be >= 0")
        _require(self.q_window > 0, f"{prefix}.q_window", "must be > 0")
        _require(self.q_ref > 0, f"{prefix}.q_ref", "must be > 0")


@dataclass
class DqnConfig:
    gamma: float = 0.9
    lr: float = 0.01
    eps_exploit: float = 0.9
    target_sync: int = 500
    batch_size: int = 32
    warmup: int = 500
    capacity: int = 2000
    # global gradient-norm cap applied before each SGD step; 0 turns it off
    max_grad_norm: float = 10.0

    def validate(self, prefix: str = "dqn") -> None:
        _require(0 <= self.gamma < 1, f"{prefix}.gamma", "must be in [0, 1)")
        _require(self.lr > 0, f"{prefix}.lr", "must be > 0")
        _require(0 <= self.eps_exploit <= 1, f"{prefix}.eps_exploit", "must be in [0, 1]")
        _require(self.target_sync >= 1, f"{prefix}.target_sync", "must be >= 1")
        _require(self.batch_size >= 1, f"{prefix}.batch_size", "must be >= 1")
        _require(self.capacity >= self.batch_size, f"{prefix}.capacity", "must be >= batch_size")
        _require(self.warmup >= self.batch_size, f"{prefix}.warmup", "must be >= batch_size")
        _require(self.max_grad_norm >= 0, f"{prefix}.max_grad_norm", "must be >= 0")


@dataclass
class ScenarioConfig:
    road: RoadConfig = field(default_factory=RoadConfig)
    spawn: SpawnConfig = field(default_factory=SpawnConfig)
    car_following: CarFollowingParams = field(default_factory=CarFollowingParams)
    safety: SafetyParams = field(default_factory=SafetyParams)
    lane_change: LaneChangeParams = field(default_factory=LaneChangeParams)
    reward: RewardParams = field(default_factory=RewardParams)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    bottleneck: Optional[BottleneckSchedule] = None
    total_steps: int = 30000
    seed: int = 1
    loop_spacing: float = 200.0
    fd_window: float = 30.0
    # trajectory rows are written every ``log_every`` steps; 0 disables the trajectory log
    log_every: int = 1

    def validate(self) -> "ScenarioConfig":
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub):
                sub.validate(f.name)
        _require(self.total_steps >= 0, "total_steps", "must be >= 0")
        _require(self.seed >= 0, "seed", "must be >= 0")
        _require(self.loop_spacing > 0, "loop_spacing", "must be > 0")
        _require(self.fd_window > 0, "fd_window", "must be > 0")
        _require(self.log_every >= 0, "log_every", "must be >= 0")
        return self

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"reward.alpha": 8})``."""
        cfg = from_flat(to_flat(self))
        for key, value in changes.items():
            _set_dotted(cfg, key, value)
        return cfg


_SECTIONS = {
    "road": RoadConfig,
    "spawn": SpawnConfig,
    "car_following": CarFollowingParams,
    "safety": SafetyParams,
    "lane_change": LaneChangeParams,
    "reward": RewardParams,
    "dqn": DqnConfig,
    "bottleneck": BottleneckSchedule,
}


def to_flat(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                out[f"{f.name}.{g.name}"] = getattr(value, g.name)
        elif f.name == "bottleneck":
            out["bottleneck.enabled"] = False
        else:
            out[f.name] = value
    if cfg.bottleneck is not None:
        out["bottleneck.enabled"] = True
    return out


def _coerce(template: Any, value: Any, key: str) -> Any:
    if isinstance(template, bool):
        if isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(template, int):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(key, f"expected an integer, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected an integer, got {value!r}") from None
    if isinstance(template, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, f"expected a number, got {value!r}") from None
    if isinstance(template, tuple):
        if isinstance(value, (int, float)):
            value = (value,)
        try:
            return tuple(value)
        except TypeError:
            raise ConfigError(key, f"expected a list, got {value!r}") from None
    return value


def _set_dotted(cfg: ScenarioConfig, key: str, value: Any) -> None:
    if "." not in key:
        if key not in {f.name for f in dataclasses.fields(cfg)} or key in _SECTIONS:
            raise ConfigError(key, "unknown key")
        setattr(cfg, key, _coerce(getattr(cfg, key), value, key))
        return
    section, name = key.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(key, "unknown section")
    if section == "bottleneck" and name == "enabled":
        enabled = _coerce(True, value, key)
        if enabled and cfg.bottleneck is None:
            cfg.bottleneck = BottleneckSchedule()
        elif not enabled:
            cfg.bottleneck = None
        return
    sub = getattr(cfg, section)
    if sub is None:
        sub = BottleneckSchedule()
        cfg.bottleneck = sub
    if name not in {f.name for f in dataclasses.fields(sub)}:
        raise ConfigError(key, "unknown key")
    setattr(sub, name, _coerce(getattr(sub, name), value, key))


def from_flat(values: dict) -> ScenarioConfig:
    cfg = ScenarioConfig()
    # 'enabled' first so bottleneck fields land on a live schedule or get dropped
    enabled = values.get("bottleneck.enabled")
    if enabled is not None:
        _set_dotted(cfg, "bottleneck.enabled", enabled)
    for key, value in values.items():
        if key == "bottleneck.enabled":
            continue
        if key.startswith("bottleneck.") and enabled is not None and cfg.bottleneck is None:
            continue
        _set_dotted(cfg, key, value)
    return cfg


def _parse_value(text: str) -> Any:
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> ScenarioConfig:
    """Parse ``section.key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = _parse_value(value)
    return from_flat(values).validate()


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    return repr(value)


def dump_config(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in to_flat(cfg).items())
