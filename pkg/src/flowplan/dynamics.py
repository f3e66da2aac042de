"""Kinematic single-track vehicle model with explicit Euler integration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VehicleState:
    """Ego vehicle state: position, steering angle, speed, heading."""

    s_x: float  # east position [m]
    s_y: float  # north position [m]
    delta: float  # steering angle [rad]
    v: float  # longitudinal speed [m/s]
    psi: float  # heading [rad]

    def as_array(self) -> np.ndarray:
        return np.array([self.s_x, self.s_y, self.delta, self.v, self.psi])

    @staticmethod
    def from_array(x: np.ndarray) -> "VehicleState":
        return VehicleState(float(x[0]), float(x[1]), float(x[2]), float(x[3]), float(x[4]))

    def is_finite(self) -> bool:
        return all(math.isfinite(f) for f in (self.s_x, self.s_y, self.delta, self.v, self.psi))


@dataclass(frozen=True)
class ControlInput:
    """Steering rate [rad/s] and longitudinal acceleration [m/s^2]."""

    v_delta: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_delta, self.a])

    def is_finite(self) -> bool:
        return math.isfinite(self.v_delta) and math.isfinite(self.a)


@dataclass(frozen=True)
class ModelParams:
    wheelbase: float = 2.7  # [m], typical passenger car
    dt: float = 0.1  # [s]
    delta_max: float | None = None  # optional steering clamp [rad]

    def __post_init__(self):
        if not (self.wheelbase > 0):
            raise ValueError(f"wheelbase must be positive, got {self.wheelbase}")
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")


def step(x: VehicleState, u: ControlInput, p: ModelParams) -> VehicleState:
    """One explicit-Euler step of the kinematic single-track model."""
    if not x.is_finite():
        raise ValueError(f"non-finite state: {x}")
    if not u.is_finite():
        raise ValueError(f"non-finite input: {u}")
    s_x = x.s_x + x.v * math.cos(x.psi) * p.dt
    s_y = x.s_y + x.v * math.sin(x.psi) * p.dt
    delta = x.delta + u.v_delta * p.dt
    if p.delta_max is not None:
        delta = min(max(delta, -p.delta_max), p.delta_max)
    v = x.v + u.a * p.dt
    psi = x.psi + x.v / p.wheelbase * math.tan(x.delta) * p.dt
    return VehicleState(s_x, s_y, delta, v, psi)


def rollout(x0: VehicleState, U: np.ndarray, p: ModelParams) -> np.ndarray:
    """Roll out an input trajectory U of shape (N, 2), returning states x_1..x_N as (N, 5)."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != 2:
        raise ValueError(f"input trajectory must have shape (N, 2), got {U.shape}")
    n = U.shape[0]
    out = np.empty((n, 5))
    x = x0
    for i in range(n):
        x = step(x, ControlInput(U[i, 0], U[i, 1]), p)
        out[i] = x.as_array()
    return out
