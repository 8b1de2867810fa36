"""Scenario files: one YAML document drives a whole run.

Parsing is strict: unknown keys are rejected with a full field path,
because silently ignored configuration is the fastest way to produce
unreproducible results. parse -> to_dict -> parse is an identity.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .alignment import PiGains, TcpFrame
from .chassis import ChassisParams
from .costmap import NoGoRegion, OccupancyCostmap, build_costmap
from .estimation import UkfConfig
from .follower import RppConfig
from .geometry import Pose2D
from .lift import LiftParams
from .mission import MissionPlan, MissionSettings, RingGoal
from .planner import PlannerConfig
from .sensors import NoiseProfile, named_profile

SCHEMA_VERSION = 1
MODES = ("mission", "localization_benchmark", "alignment_benchmark")


class ScenarioError(ValueError):
    """Config rejection with the offending field path in the message."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


_REQUIRED = object()


def _expect_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _expect_list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ScenarioError(path, f"expected a list, got {type(value).__name__}")
    return value


def _pop(d: dict, key: str, path: str, default=_REQUIRED):
    if key in d:
        return d.pop(key)
    if default is _REQUIRED:
        raise ScenarioError(f"{path}.{key}", "required key missing")
    return default


def _no_leftovers(d: dict, path: str) -> None:
    if d:
        key = sorted(d)[0]
        raise ScenarioError(f"{path}.{key}", "unknown key")


def _number(value, path: str, minimum=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {type(value).__name__}")
    v = float(value)
    if not math.isfinite(v):
        raise ScenarioError(path, "must be finite")
    if minimum is not None and v < minimum:
        raise ScenarioError(path, f"must be >= {minimum}")
    return v


def _vector(value, path: str, length: int) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ScenarioError(path, f"expected a {length}-element list")
    return tuple(_number(v, f"{path}[{i}]") for i, v in enumerate(value))


def _coerce(val, path: str):
    """YAML value -> config field value, with lists becoming tuples."""
    if isinstance(val, bool):
        return val
    if isinstance(val, (list, tuple)):
        return tuple(_coerce(v, f"{path}[{i}]") for i, v in enumerate(val))
    if isinstance(val, (int, float)):
        return _number(val, path)
    if isinstance(val, str) or val is None:
        return val
    raise ScenarioError(path, f"unsupported value type {type(val).__name__}")


def _configure(default, overrides: dict, path: str):
    """dataclasses.replace with unknown-key rejection and coercion."""
    names = {f.name for f in dataclasses.fields(default)}
    clean = {}
    for key, val in overrides.items():
        if key not in names:
            raise ScenarioError(f"{path}.{key}", "unknown key")
        clean[key] = _coerce(val, f"{path}.{key}")
    try:
        return dataclasses.replace(default, **clean)
    except (ValueError, TypeError) as e:
        raise ScenarioError(path, str(e)) from None


@dataclass
class Scenario:
    name: str
    mode: str
    seed: int
    map_origin: tuple[float, float]
    map_size: tuple[float, float]
    resolution: float
    robot_radius: float
    inflation_radius: float
    cost_scaling: float
    regions: list[NoGoRegion]
    rings: list[tuple[float, float]]
    start_pose: Pose2D
    profile_name: str
    profile_overrides: dict
    profile: NoiseProfile
    chassis: ChassisParams
    ukf: UkfConfig
    planner: PlannerConfig
    follower: RppConfig
    gains: PiGains
    tcp: TcpFrame
    lift: LiftParams
    mission: dict = field(default_factory=dict)
    benchmark: dict = field(default_factory=dict)

    # -- assembly helpers ---------------------------------------------------

    def build_map(self) -> OccupancyCostmap:
        return build_costmap(
            self.map_origin, self.map_size, self.resolution, self.regions,
            robot_radius=self.robot_radius,
            inflation_radius=self.inflation_radius,
            cost_scaling=self.cost_scaling,
        )

    def mission_plan(self, seed: int | None = None) -> MissionPlan:
        return MissionPlan(
            rings=[RingGoal(i, xy) for i, xy in enumerate(self.rings)],
            map=self.build_map(),
            metadata={"name": self.name, "mode": self.mode},
            seed=self.seed if seed is None else seed,
        )

    def mission_settings(self) -> MissionSettings:
        # slip stays None: the world derives it from the profile and the
        # plan seed, so a seed override reseeds slip and sensors together
        return MissionSettings(
            start_pose=self.start_pose,
            profile=self.profile,
            chassis=self.chassis,
            ukf=self.ukf,
            planner=self.planner,
            follower=self.follower,
            gains=self.gains,
            tcp=self.tcp,
            lift=self.lift,
            **self.mission,
        )

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "mode": self.mode,
            "seed": self.seed,
            "map": {
                "origin": list(self.map_origin),
                "size": list(self.map_size),
                "resolution": self.resolution,
                "robot_radius": self.robot_radius,
                "inflation_radius": self.inflation_radius,
                "cost_scaling": self.cost_scaling,
            },
            "regions": [
                {"kind": r.kind, "polygon": [list(p) for p in r.polygon]}
                for r in self.regions
            ],
            "rings": [list(xy) for xy in self.rings],
            "start_pose": [self.start_pose.x, self.start_pose.y, self.start_pose.psi],
            "profile": {"name": self.profile_name, "overrides": dict(self.profile_overrides)},
            "chassis": _diff(self.chassis, ChassisParams()),
            "ukf": _diff(self.ukf, UkfConfig()),
            "planner": _diff(self.planner, PlannerConfig()),
            "follower": _diff(self.follower, RppConfig()),
            "alignment": {
                "gains": _diff(self.gains, PiGains()),
                "tcp_offset": list(self.tcp.offset_body),
            },
            "lift": _diff(self.lift, LiftParams()),
            "mission": dict(self.mission),
            "benchmark": dict(self.benchmark),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)


def _diff(cfg, default) -> dict:
    """Only the fields that differ from the stock config, for readable dumps."""
    out = {}
    for f in dataclasses.fields(cfg):
        a, b = getattr(cfg, f.name), getattr(default, f.name)
        if a != b:
            out[f.name] = list(a) if isinstance(a, tuple) else a
    return out


_MISSION_KEYS = {
    "approach_distance", "collar_keepout_radius", "plan_margin",
    "align_tolerance", "align_hold_time", "align_timeout",
    "acquire_timeout", "dwell_time", "follow_timeout", "backoff_distance",
    "max_recovery_attempts", "init_spread",
}

_BENCHMARK_KEYS = {
    "runs", "loop_length", "loop_speed", "init_spread",
    "staging_jitter", "settle_time", "ramp_time",
}


def parse_scenario(text: str, source: str = "scenario") -> Scenario:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(source, f"not valid YAML: {e}") from None
    data = dict(_expect_mapping(raw, source))

    version = _pop(data, "schema_version", source)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{source}.schema_version",
                            f"expected {SCHEMA_VERSION}, got {version!r}")
    name = _pop(data, "name", source)
    if not isinstance(name, str) or not name:
        raise ScenarioError(f"{source}.name", "expected a non-empty string")
    mode = _pop(data, "mode", source)
    if mode not in MODES:
        raise ScenarioError(f"{source}.mode", f"expected one of {MODES}")
    seed = _pop(data, "seed", source)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ScenarioError(f"{source}.seed", "expected a non-negative integer")

    m = dict(_expect_mapping(_pop(data, "map", source), f"{source}.map"))
    origin = _vector(_pop(m, "origin", f"{source}.map"), f"{source}.map.origin", 2)
    size = _vector(_pop(m, "size", f"{source}.map"), f"{source}.map.size", 2)
    if size[0] <= 0 or size[1] <= 0:
        raise ScenarioError(f"{source}.map.size", "extent must be positive")
    resolution = _number(_pop(m, "resolution", f"{source}.map"),
                         f"{source}.map.resolution")
    if resolution <= 0:
        raise ScenarioError(f"{source}.map.resolution", "must be positive")
    robot_radius = _number(_pop(m, "robot_radius", f"{source}.map", 0.30),
                           f"{source}.map.robot_radius", minimum=0.0)
    inflation = _number(_pop(m, "inflation_radius", f"{source}.map", 0.8),
                        f"{source}.map.inflation_radius", minimum=0.0)
    scaling = _number(_pop(m, "cost_scaling", f"{source}.map", 3.0),
                      f"{source}.map.cost_scaling", minimum=0.0)
    _no_leftovers(m, f"{source}.map")

    regions = []
    region_list = _expect_list(_pop(data, "regions", source, []), f"{source}.regions")
    for i, entry in enumerate(region_list):
        p = f"{source}.regions[{i}]"
        e = dict(_expect_mapping(entry, p))
        kind = _pop(e, "kind", p, "generic")
        poly = _pop(e, "polygon", p)
        if not isinstance(poly, list) or len(poly) < 3:
            raise ScenarioError(f"{p}.polygon", "expected a list of >= 3 points")
        pts = tuple(_vector(v, f"{p}.polygon[{j}]", 2) for j, v in enumerate(poly))
        _no_leftovers(e, p)
        try:
            regions.append(NoGoRegion(pts, kind))
        except ValueError as err:
            raise ScenarioError(p, str(err)) from None

    rings = [
        _vector(v, f"{source}.rings[{i}]", 2)
        for i, v in enumerate(_expect_list(_pop(data, "rings", source, []),
                                           f"{source}.rings"))
    ]
    sp = _vector(_pop(data, "start_pose", source), f"{source}.start_pose", 3)
    start_pose = Pose2D(*sp)

    prof = dict(_expect_mapping(_pop(data, "profile", source, {"name": "outdoor"}),
                                f"{source}.profile"))
    prof_name = _pop(prof, "name", f"{source}.profile")
    overrides = dict(_expect_mapping(_pop(prof, "overrides", f"{source}.profile", {}),
                                     f"{source}.profile.overrides"))
    _no_leftovers(prof, f"{source}.profile")
    base = NoiseProfile()
    known = {f.name for f in dataclasses.fields(base)}
    for key in overrides:
        if key not in known:
            raise ScenarioError(f"{source}.profile.overrides.{key}", "unknown key")
    try:
        profile = named_profile(prof_name, **{
            k: _coerce(v, f"{source}.profile.overrides.{k}")
            for k, v in overrides.items()
        })
    except (KeyError, ValueError) as e:
        raise ScenarioError(f"{source}.profile", str(e)) from None

    chassis = _configure(ChassisParams(),
                         _expect_mapping(_pop(data, "chassis", source, {}),
                                         f"{source}.chassis"),
                         f"{source}.chassis")
    ukf = _configure(UkfConfig(),
                     _expect_mapping(_pop(data, "ukf", source, {}), f"{source}.ukf"),
                     f"{source}.ukf")
    planner = _configure(PlannerConfig(),
                         _expect_mapping(_pop(data, "planner", source, {}),
                                         f"{source}.planner"),
                         f"{source}.planner")
    follower = _configure(RppConfig(),
                          _expect_mapping(_pop(data, "follower", source, {}),
                                          f"{source}.follower"),
                          f"{source}.follower")
    align = dict(_expect_mapping(_pop(data, "alignment", source, {}),
                                 f"{source}.alignment"))
    gains = _configure(PiGains(),
                       _expect_mapping(_pop(align, "gains", f"{source}.alignment", {}),
                                       f"{source}.alignment.gains"),
                       f"{source}.alignment.gains")
    tcp_off = _vector(_pop(align, "tcp_offset", f"{source}.alignment", [-0.45, 0.0]),
                      f"{source}.alignment.tcp_offset", 2)
    _no_leftovers(align, f"{source}.alignment")
    tcp = TcpFrame(offset_body=tcp_off)
    lift = _configure(LiftParams(),
                      _expect_mapping(_pop(data, "lift", source, {}), f"{source}.lift"),
                      f"{source}.lift")

    mission = dict(_expect_mapping(_pop(data, "mission", source, {}),
                                   f"{source}.mission"))
    for key in mission:
        if key not in _MISSION_KEYS:
            raise ScenarioError(f"{source}.mission.{key}", "unknown key")
        mission[key] = _coerce(mission[key], f"{source}.mission.{key}")
    if "max_recovery_attempts" in mission:
        mission["max_recovery_attempts"] = int(mission["max_recovery_attempts"])

    benchmark = dict(_expect_mapping(_pop(data, "benchmark", source, {}),
                                     f"{source}.benchmark"))
    for key in benchmark:
        if key not in _BENCHMARK_KEYS:
            raise ScenarioError(f"{source}.benchmark.{key}", "unknown key")
        benchmark[key] = _coerce(benchmark[key], f"{source}.benchmark.{key}")
    if "runs" in benchmark:
        benchmark["runs"] = int(benchmark["runs"])

    _no_leftovers(data, source)

    scn = Scenario(
        name=name, mode=mode, seed=seed,
        map_origin=origin, map_size=size, resolution=resolution,
        robot_radius=robot_radius, inflation_radius=inflation,
        cost_scaling=scaling, regions=regions, rings=rings,
        start_pose=start_pose, profile_name=prof_name,
        profile_overrides=overrides, profile=profile, chassis=chassis,
        ukf=ukf, planner=planner, follower=follower, gains=gains, tcp=tcp,
        lift=lift, mission=mission, benchmark=benchmark,
    )
    _validate_semantics(scn, source)
    return scn


def _validate_semantics(scn: Scenario, source: str) -> None:
    x0, y0 = scn.map_origin
    x1, y1 = x0 + scn.map_size[0], y0 + scn.map_size[1]
    for i, (x, y) in enumerate(scn.rings):
        if not (x0 <= x <= x1 and y0 <= y <= y1):
            raise ScenarioError(f"{source}.rings[{i}]", "collar outside map extent")
    if not (x0 <= scn.start_pose.x <= x1 and y0 <= scn.start_pose.y <= y1):
        raise ScenarioError(f"{source}.start_pose", "outside map extent")


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, source=str(path))
