"""Five-term trajectory cost stack with path projection and ellipsoidal traffic distance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Default scaling parameters for the weighted total.
DEFAULT_ALPHA = (0.5, 10.0, 0.06, 1.0, 4.5)


@dataclass(frozen=True)
class CostWeights:
    alpha: tuple[float, ...] = DEFAULT_ALPHA

    def __post_init__(self):
        if len(self.alpha) != 5:
            raise ValueError(f"alpha must have 5 entries, got {len(self.alpha)}")
        if any(a < 0 for a in self.alpha):
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")

    def as_array(self) -> np.ndarray:
        return np.array(self.alpha)


@dataclass(frozen=True)
class LocalPath:
    """Ordered 2-D waypoint polyline of reference positions."""

    waypoints: np.ndarray  # (P, 2)

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise ValueError(f"waypoints must have shape (P>=2, 2), got {wp.shape}")
        if np.any(np.all(np.diff(wp, axis=0) == 0, axis=1)):
            raise ValueError("consecutive waypoints must be distinct")
        object.__setattr__(self, "waypoints", wp)

    @property
    def cumulative_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def total_length(self) -> float:
        return float(self.cumulative_lengths[-1])

    def point_at_arc(self, s) -> np.ndarray:
        """Position(s) at arc length s, clamped to the polyline ends."""
        cum = self.cumulative_lengths
        s = np.clip(s, 0.0, cum[-1])
        x = np.interp(s, cum, self.waypoints[:, 0])
        y = np.interp(s, cum, self.waypoints[:, 1])
        return np.stack([x, y], axis=-1)

    def arc_of_point(self, point: np.ndarray) -> float:
        """Arc length of the nearest polyline point to `point`."""
        p = np.asarray(point, dtype=float)
        wp = self.waypoints
        a = wp[:-1]
        d = wp[1:] - wp[:-1]
        l2 = np.sum(d**2, axis=1)
        t = np.clip(np.sum((p - a) * d, axis=1) / l2, 0.0, 1.0)
        q = a + t[:, None] * d
        d2 = np.sum((p - q) ** 2, axis=1)
        j = int(np.argmin(d2))
        return float(self.cumulative_lengths[j] + t[j] * np.sqrt(l2[j]))

    def tangent_at_arc(self, s: float) -> float:
        """Heading of the polyline segment containing arc length s."""
        cum = self.cumulative_lengths
        j = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2))
        d = self.waypoints[j + 1] - self.waypoints[j]
        return float(np.arctan2(d[1], d[0]))


@dataclass(frozen=True)
class EllipseParams:
    a_e: float = 6.0  # longitudinal semi-axis [m]
    b_e: float = 2.0  # lateral semi-axis [m]
    d_floor: float = 1e-3  # bounds 1/d_e^2 at coincidence

    def __post_init__(self):
        if not (self.a_e > 0 and self.b_e > 0 and self.d_floor > 0):
            raise ValueError("ellipse parameters must be positive")


def velocity_cost(X: np.ndarray, v_des: float) -> float:
    """c1: sum of squared speed deviations over the trajectory."""
    X = np.asarray(X, dtype=float)
    return float(np.sum((X[:, 3] - v_des) ** 2))


def terminal_cost(X: np.ndarray, goal: np.ndarray) -> float:
    """c2: Euclidean offset of the final trajectory point from the desired end position."""
    X = np.asarray(X, dtype=float)
    return float(np.linalg.norm(X[-1, :2] - np.asarray(goal, dtype=float)))


def smoothness_cost(U: np.ndarray) -> float:
    """c3: sum of squared step-to-step input differences over both channels."""
    U = np.asarray(U, dtype=float)
    return float(np.sum(np.diff(U, axis=0) ** 2))


def project_to_path(point: np.ndarray, path: LocalPath) -> float:
    """Signed lateral offset from a point to the nearest point on the polyline.

    Positive left of the local path direction, negative right.
    """
    tau = project_points_to_path(np.asarray(point, dtype=float)[None, :], path)
    return float(tau[0])


def project_points_to_path(points: np.ndarray, path: LocalPath) -> np.ndarray:
    """Vectorized signed lateral offsets for an (n, 2) array of points."""
    pts = np.asarray(points, dtype=float)
    wp = path.waypoints
    a = wp[:-1]
    d = wp[1:] - wp[:-1]
    l2 = np.sum(d**2, axis=1)
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.sum(rel * d[None, :, :], axis=2) / l2[None, :], 0.0, 1.0)
    q = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = pts[:, None, :] - q
    d2 = np.sum(diff**2, axis=2)
    j = np.argmin(d2, axis=1)
    rows = np.arange(pts.shape[0])
    dj = d[j]
    off = diff[rows, j]
    cross = dj[:, 0] * off[:, 1] - dj[:, 1] * off[:, 0]
    return np.sign(cross) * np.sqrt(d2[rows, j])


def path_cost(X: np.ndarray, path: LocalPath) -> float:
    """c4: sum of squared signed lateral offsets over the trajectory."""
    X = np.asarray(X, dtype=float)
    tau = project_points_to_path(X[:, :2], path)
    return float(np.sum(tau**2))


def traffic_frame_offset(ego_point: np.ndarray, traffic_pose: np.ndarray) -> tuple[float, float]:
    """World-frame position difference rotated into the traffic vehicle's frame."""
    ex, ey = float(ego_point[0]), float(ego_point[1])
    tx, ty, tpsi = float(traffic_pose[0]), float(traffic_pose[1]), float(traffic_pose[2])
    dx = ex - tx
    dy = ey - ty
    c = np.cos(tpsi)
    s = np.sin(tpsi)
    return (c * dx + s * dy, -s * dx + c * dy)


def scaled_ellipse_distance(ego_point, traffic_pose, e: EllipseParams) -> float:
    """Ellipse-scaled squared distance d_e between an ego point and a traffic pose."""
    lx, ly = traffic_frame_offset(ego_point, traffic_pose)
    return (lx / e.a_e) ** 2 + (ly / e.b_e) ** 2


def traffic_cost(X: np.ndarray, traffic: np.ndarray, e: EllipseParams) -> float:
    """c5: summed inverse-square scaled distances to every traffic vehicle at every step.

    traffic has shape (M, N, 3): per-vehicle predicted poses [s_x, s_y, psi].
    """
    X = np.asarray(X, dtype=float)
    traffic = np.asarray(traffic, dtype=float)
    if traffic.size == 0:
        return 0.0
    dx = X[None, :, 0] - traffic[:, :, 0]
    dy = X[None, :, 1] - traffic[:, :, 1]
    c = np.cos(traffic[:, :, 2])
    s = np.sin(traffic[:, :, 2])
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    d_e = (lx / e.a_e) ** 2 + (ly / e.b_e) ** 2
    return float(np.sum(1.0 / np.maximum(d_e, e.d_floor) ** 2))


@dataclass(frozen=True)
class CostContext:
    """Everything needed to score one candidate trajectory."""

    v_des: float
    goal: np.ndarray
    path: LocalPath
    traffic: np.ndarray  # (M, N, 3)
    ellipse: EllipseParams = field(default_factory=EllipseParams)
    weights: CostWeights = field(default_factory=CostWeights)


def total_cost(X: np.ndarray, U: np.ndarray, ctx: CostContext) -> tuple[float, np.ndarray]:
    """Weighted total S and the unweighted per-term breakdown c1..c5."""
    breakdown = np.array(
        [
            velocity_cost(X, ctx.v_des),
            terminal_cost(X, ctx.goal),
            smoothness_cost(U),
            path_cost(X, ctx.path),
            traffic_cost(X, ctx.traffic, ctx.ellipse),
        ]
    )
    return float(ctx.weights.as_array() @ breakdown), breakdown
