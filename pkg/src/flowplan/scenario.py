"""Built-in driving scenarios: synthetic curved road, traffic, variants, file I/O.

The road is a gently curved polyline (one full sine period of curvature over
the driving distance, i.e. a left and a right curve) extended beyond the course
goal so the planning horizon never runs off the path. Traffic vehicles follow
the road at constant speed with a constant lateral offset; static vehicles
repeat their pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .costs import LocalPath
from .dynamics import VehicleState

LANE_WIDTH = 3.5  # [m]
PATH_SPACING = 2.5  # waypoint spacing [m]
PATH_MARGIN = 120.0  # road continues past the course goal [m]
CURVATURE_AMPLITUDE = 0.008  # [1/m], radius 125 m at the apex


class ScenarioFormatError(Exception):
    """Raised when a scenario file is missing fields or malformed."""


@dataclass(frozen=True)
class TrafficVehicle:
    s_x: float  # initial east position [m]
    s_y: float  # initial north position [m]
    psi: float  # initial heading [rad]
    speed: float  # [m/s], 0 for static vehicles
    lateral_offset: float  # constant offset left of the road centerline [m]

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"traffic speed must be non-negative, got {self.speed}")


@dataclass(frozen=True)
class Scenario:
    path: LocalPath
    total_distance: float  # course length along the path [m]
    traffic: tuple[TrafficVehicle, ...]
    v_des: float  # [m/s]
    T_end: float  # run duration [s]
    x0: VehicleState
    variant: str

    def __post_init__(self):
        if not (self.T_end > 0):
            raise ValueError(f"T_end must be positive, got {self.T_end}")
        if self.path.total_length < self.total_distance:
            raise ValueError("path is shorter than the course distance")

    @property
    def goal(self) -> np.ndarray:
        return self.path.point_at_arc(self.total_distance)


def _make_road(total_distance: float) -> LocalPath:
    length = total_distance + PATH_MARGIN
    n = int(math.ceil(length / PATH_SPACING)) + 1
    xs = np.empty(n)
    ys = np.empty(n)
    theta = 0.0
    x = y = 0.0
    for i in range(n):
        xs[i] = x
        ys[i] = y
        s = i * PATH_SPACING
        kappa = CURVATURE_AMPLITUDE * math.sin(2.0 * math.pi * s / total_distance)
        theta += kappa * PATH_SPACING
        x += math.cos(theta) * PATH_SPACING
        y += math.sin(theta) * PATH_SPACING
    return LocalPath(np.stack([xs, ys], axis=1))


def _offset_pose(path: LocalPath, arc: float, lateral: float) -> tuple[float, float, float]:
    base = path.point_at_arc(arc)
    psi = path.tangent_at_arc(arc)
    # Positive lateral offset is left of the path direction.
    return (
        float(base[0] - lateral * math.sin(psi)),
        float(base[1] + lateral * math.cos(psi)),
        psi,
    )


def _lane_vehicle(path: LocalPath, arc: float, lateral: float, speed: float) -> TrafficVehicle:
    x, y, psi = _offset_pose(path, arc, lateral)
    return TrafficVehicle(x, y, psi, speed, lateral)


def _start_state(path: LocalPath, v0: float) -> VehicleState:
    # The ego enters the course already at the desired speed.
    p0 = path.point_at_arc(0.0)
    return VehicleState(float(p0[0]), float(p0[1]), 0.0, v0, path.tangent_at_arc(0.0))


STATIC_VARIANTS = {1: (6.0, 45.0), 2: (8.0, 35.0), 3: (10.0, 28.0)}
DYNAMIC_VARIANTS = {1: (8.0, (4.0, 4.5), 30.0), 2: (10.0, (4.0, 5.0), 18.0), 3: (10.0, (5.0, 6.0), 18.0)}

# Static obstacles: alternating lateral offsets force a slalom around the path.
STATIC_OBSTACLE_ARCS = (55.0, 105.0, 155.0, 205.0)
STATIC_OBSTACLE_LATERALS = (1.5, -1.5, 1.5, -1.5)

# Dynamic traffic starts ahead of the ego, keeping slightly right of the
# centerline (leaving passing room on the left).
DYNAMIC_TRAFFIC_ARCS = (22.0, 52.0)
DYNAMIC_TRAFFIC_LATERAL = -0.4


def build_static_scenario(variant: int) -> Scenario:
    if variant not in STATIC_VARIANTS:
        raise ValueError(f"static variant must be 1, 2, or 3, got {variant}")
    v_des, t_end = STATIC_VARIANTS[variant]
    total = 250.0
    path = _make_road(total)
    traffic = tuple(
        _lane_vehicle(path, arc, lat, 0.0)
        for arc, lat in zip(STATIC_OBSTACLE_ARCS, STATIC_OBSTACLE_LATERALS)
    )
    return Scenario(path, total, traffic, v_des, t_end, _start_state(path, v_des), f"static:{variant}")


def build_dynamic_scenario(variant: int) -> Scenario:
    if variant not in DYNAMIC_VARIANTS:
        raise ValueError(f"dynamic variant must be 1, 2, or 3, got {variant}")
    v_des, speeds, t_end = DYNAMIC_VARIANTS[variant]
    total = 130.0
    path = _make_road(total)
    traffic = tuple(
        _lane_vehicle(path, arc, DYNAMIC_TRAFFIC_LATERAL, speed)
        for arc, speed in zip(DYNAMIC_TRAFFIC_ARCS, speeds)
    )
    return Scenario(path, total, traffic, v_des, t_end, _start_state(path, v_des), f"dynamic:{variant}")


def builtin_scenario(spec: str) -> Scenario:
    """Resolve a built-in id like 'static:1' or 'dynamic:3'."""
    try:
        family, num = spec.split(":")
        variant = int(num)
    except ValueError as e:
        raise ValueError(f"expected 'static:N' or 'dynamic:N', got {spec!r}") from e
    if family == "static":
        return build_static_scenario(variant)
    if family == "dynamic":
        return build_dynamic_scenario(variant)
    raise ValueError(f"unknown scenario family {family!r}")


def traffic_trajectory(
    vehicle: TrafficVehicle, path: LocalPath, t0: float, N: int, dt: float
) -> np.ndarray:
    """N predicted poses (s_x, s_y, psi) at times t0+dt .. t0+N*dt.

    Moving vehicles advance along the road by arc length at constant speed,
    keeping their lateral offset; beyond the path end they continue straight
    along the final tangent. Static vehicles repeat their pose.
    """
    out = np.empty((N, 3))
    if vehicle.speed == 0.0:
        out[:] = (vehicle.s_x, vehicle.s_y, vehicle.psi)
        return out
    s0 = path.arc_of_point((vehicle.s_x, vehicle.s_y))
    length = path.total_length
    for i in range(N):
        s = s0 + vehicle.speed * (t0 + (i + 1) * dt)
        if s <= length:
            x, y, psi = _offset_pose(path, s, vehicle.lateral_offset)
        else:
            x, y, psi = _offset_pose(path, length, vehicle.lateral_offset)
            x += (s - length) * math.cos(psi)
            y += (s - length) * math.sin(psi)
        out[i] = (x, y, psi)
    return out


def predict_traffic(scenario: Scenario, t0: float, N: int, dt: float) -> np.ndarray:
    """Stacked predictions for all traffic vehicles, shape (M, N, 3)."""
    if not scenario.traffic:
        return np.zeros((0, N, 3))
    return np.stack(
        [traffic_trajectory(v, scenario.path, t0, N, dt) for v in scenario.traffic]
    )


def traffic_poses_at(scenario: Scenario, t: float) -> np.ndarray:
    """Current poses of all traffic vehicles at absolute time t, shape (M, 3)."""
    if not scenario.traffic:
        return np.zeros((0, 3))
    if t <= 0.0:
        return np.array([(v.s_x, v.s_y, v.psi) for v in scenario.traffic])
    return predict_traffic(scenario, 0.0, 1, t)[:, 0, :]


# -- file I/O ------------------------------------------------------------

_REQUIRED_FIELDS = ("waypoints", "total_distance", "traffic", "v_des", "T_end", "x0", "variant")


def save_scenario(scenario: Scenario, path) -> None:
    doc = {
        "waypoints": [[float(x), float(y)] for x, y in scenario.path.waypoints],
        "total_distance": float(scenario.total_distance),
        "traffic": [
            {
                "s_x": float(v.s_x),
                "s_y": float(v.s_y),
                "psi": float(v.psi),
                "speed": float(v.speed),
                "lateral_offset": float(v.lateral_offset),
            }
            for v in scenario.traffic
        ],
        "v_des": float(scenario.v_des),
        "T_end": float(scenario.T_end),
        "x0": {
            "s_x": scenario.x0.s_x,
            "s_y": scenario.x0.s_y,
            "delta": scenario.x0.delta,
            "v": scenario.x0.v,
            "psi": scenario.x0.psi,
        },
        "variant": scenario.variant,
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=True)


def load_scenario(path) -> Scenario:
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ScenarioFormatError(f"unparseable scenario file {path}") from e
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"scenario file {path} must contain a mapping")
    missing = [k for k in _REQUIRED_FIELDS if k not in doc]
    if missing:
        raise ScenarioFormatError(f"scenario file {path} is missing fields: {missing}")
    try:
        traffic = tuple(
            TrafficVehicle(t["s_x"], t["s_y"], t["psi"], t["speed"], t["lateral_offset"])
            for t in doc["traffic"]
        )
        x0 = doc["x0"]
        return Scenario(
            LocalPath(np.asarray(doc["waypoints"], dtype=float)),
            float(doc["total_distance"]),
            traffic,
            float(doc["v_des"]),
            float(doc["T_end"]),
            VehicleState(x0["s_x"], x0["s_y"], x0["delta"], x0["v"], x0["psi"]),
            str(doc["variant"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioFormatError(f"invalid scenario file {path}: {e}") from e
