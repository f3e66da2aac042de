"""Batched rollout-and-cost evaluation for the planner inner loop.

Two interchangeable backends compute identical math:

* a numba ``@njit(parallel=True)`` kernel (default when numba is importable),
* a vectorized pure-numpy fallback.

Set the environment variable ``FLOWPLAN_NO_NUMBA=1`` to force the numpy path.
Results agree up to floating-point summation order; each backend is
deterministic on its own.
"""

from __future__ import annotations

import math
import os

import numpy as np

_USE_NUMBA = os.environ.get("FLOWPLAN_NO_NUMBA", "0") not in ("1", "true", "yes")
if _USE_NUMBA:
    try:
        import numba
        from numba import njit, prange
    except ImportError:  # pragma: no cover
        _USE_NUMBA = False


def backend() -> str:
    """Name of the active backend, 'numba' or 'numpy'."""
    return "numba" if _USE_NUMBA else "numpy"


def rollout_costs(
    x0: np.ndarray,
    U: np.ndarray,
    dt: float,
    wheelbase: float,
    delta_max: float,
    v_des: float,
    goal: np.ndarray,
    path_xy: np.ndarray,
    traffic: np.ndarray,
    a_e: float,
    b_e: float,
    d_floor: float,
    alpha: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Roll out K input trajectories and evaluate the five-term cost stack.

    Parameters
    ----------
    x0 : (5,) initial state [s_x, s_y, delta, v, psi]
    U : (K, N, 2) input trajectories [v_delta, a]
    delta_max : steering clamp [rad], np.inf for unbounded
    goal : (2,) desired end position for the terminal cost
    path_xy : (P, 2) local reference polyline for the lateral-offset cost
    traffic : (M, N, 3) predicted traffic poses [s_x, s_y, psi] per step
    alpha : (5,) cost weights

    Returns
    -------
    breakdown : (K, 5) unweighted per-term costs c1..c5
    S : (K,) weighted totals
    """
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    goal = np.ascontiguousarray(goal, dtype=np.float64)
    path_xy = np.ascontiguousarray(path_xy, dtype=np.float64)
    traffic = np.ascontiguousarray(traffic, dtype=np.float64)
    alpha = np.ascontiguousarray(alpha, dtype=np.float64)
    if _USE_NUMBA:
        breakdown = _rollout_costs_numba(
            x0, U, dt, wheelbase, delta_max, v_des, goal, path_xy, traffic, a_e, b_e, d_floor
        )
    else:
        breakdown = _rollout_costs_numpy(
            x0, U, dt, wheelbase, delta_max, v_des, goal, path_xy, traffic, a_e, b_e, d_floor
        )
    return breakdown, breakdown @ alpha


def _rollout_costs_numpy(
    x0, U, dt, wheelbase, delta_max, v_des, goal, path_xy, traffic, a_e, b_e, d_floor
):
    K, N, _ = U.shape
    states = np.empty((K, N, 5))
    s_x = np.full(K, x0[0])
    s_y = np.full(K, x0[1])
    delta = np.full(K, x0[2])
    v = np.full(K, x0[3])
    psi = np.full(K, x0[4])
    for i in range(N):
        s_x = s_x + v * np.cos(psi) * dt
        s_y = s_y + v * np.sin(psi) * dt
        psi_new = psi + v / wheelbase * np.tan(delta) * dt
        delta = np.clip(delta + U[:, i, 0] * dt, -delta_max, delta_max)
        v = v + U[:, i, 1] * dt
        psi = psi_new
        states[:, i, 0] = s_x
        states[:, i, 1] = s_y
        states[:, i, 2] = delta
        states[:, i, 3] = v
        states[:, i, 4] = psi

    c1 = np.sum((states[:, :, 3] - v_des) ** 2, axis=1)
    c2 = np.sqrt((s_x - goal[0]) ** 2 + (s_y - goal[1]) ** 2)
    c3 = np.sum(np.diff(U, axis=1) ** 2, axis=(1, 2))

    pts = states[:, :, :2].reshape(K * N, 2)
    tau = _project_signed_numpy(pts, path_xy)
    c4 = np.sum(tau.reshape(K, N) ** 2, axis=1)

    c5 = np.zeros(K)
    for m in range(traffic.shape[0]):
        tx = traffic[m, :, 0]
        ty = traffic[m, :, 1]
        tpsi = traffic[m, :, 2]
        dx = states[:, :, 0] - tx
        dy = states[:, :, 1] - ty
        cosr = np.cos(tpsi)
        sinr = np.sin(tpsi)
        lx = cosr * dx + sinr * dy
        ly = -sinr * dx + cosr * dy
        d_e = (lx / a_e) ** 2 + (ly / b_e) ** 2
        c5 += np.sum(1.0 / np.maximum(d_e, d_floor) ** 2, axis=1)

    return np.stack([c1, c2, c3, c4, c5], axis=1)


def _project_signed_numpy(pts, path_xy):
    """Signed lateral offset of each point to the nearest polyline segment.

    Positive left of the local path direction, negative right.
    """
    a = path_xy[:-1]
    d = path_xy[1:] - path_xy[:-1]
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


if _USE_NUMBA:

    @njit(cache=True, fastmath=False)
    def _project_signed_point(px, py, path_xy):
        best_d2 = np.inf
        best_cross = 0.0
        for j in range(path_xy.shape[0] - 1):
            ax = path_xy[j, 0]
            ay = path_xy[j, 1]
            dx = path_xy[j + 1, 0] - ax
            dy = path_xy[j + 1, 1] - ay
            l2 = dx * dx + dy * dy
            t = ((px - ax) * dx + (py - ay) * dy) / l2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            qx = ax + t * dx
            qy = ay + t * dy
            ox = px - qx
            oy = py - qy
            d2 = ox * ox + oy * oy
            if d2 < best_d2:
                best_d2 = d2
                best_cross = dx * oy - dy * ox
        return np.sign(best_cross) * np.sqrt(best_d2)

    @njit(cache=True, parallel=True, fastmath=False)
    def _rollout_costs_numba(
        x0, U, dt, wheelbase, delta_max, v_des, goal, path_xy, traffic, a_e, b_e, d_floor
    ):
        K, N, _ = U.shape
        M = traffic.shape[0]
        breakdown = np.zeros((K, 5))
        for k in prange(K):
            s_x = x0[0]
            s_y = x0[1]
            delta = x0[2]
            v = x0[3]
            psi = x0[4]
            c1 = 0.0
            c4 = 0.0
            c5 = 0.0
            for i in range(N):
                s_x = s_x + v * math.cos(psi) * dt
                s_y = s_y + v * math.sin(psi) * dt
                psi_new = psi + v / wheelbase * math.tan(delta) * dt
                delta = delta + U[k, i, 0] * dt
                if delta > delta_max:
                    delta = delta_max
                elif delta < -delta_max:
                    delta = -delta_max
                v = v + U[k, i, 1] * dt
                psi = psi_new
                c1 += (v - v_des) ** 2
                tau = _project_signed_point(s_x, s_y, path_xy)
                c4 += tau * tau
                for m in range(M):
                    dx = s_x - traffic[m, i, 0]
                    dy = s_y - traffic[m, i, 1]
                    cosr = math.cos(traffic[m, i, 2])
                    sinr = math.sin(traffic[m, i, 2])
                    lx = cosr * dx + sinr * dy
                    ly = -sinr * dx + cosr * dy
                    d_e = (lx / a_e) ** 2 + (ly / b_e) ** 2
                    if d_e < d_floor:
                        d_e = d_floor
                    c5 += 1.0 / (d_e * d_e)
            c2 = math.sqrt((s_x - goal[0]) ** 2 + (s_y - goal[1]) ** 2)
            c3 = 0.0
            for i in range(N - 1):
                c3 += (U[k, i + 1, 0] - U[k, i, 0]) ** 2 + (U[k, i + 1, 1] - U[k, i, 1]) ** 2
            breakdown[k, 0] = c1
            breakdown[k, 1] = c2
            breakdown[k, 2] = c3
            breakdown[k, 3] = c4
            breakdown[k, 4] = c5
        return breakdown
