"""MPPI planning step and receding-horizon loop with warm starting.

Per planning step: draw K noise trajectories, add them to the warm-started
mean input trajectory, roll each out through the vehicle model, score with the
five-term cost stack, weight by exp(-(S - min S)/lambda), and average the
noises into the updated input trajectory. The first input is applied to the
vehicle, the rest is shifted into the next warm start.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import costs, kernels, sampling
from .costs import CostContext, CostWeights, EllipseParams
from .dynamics import ControlInput, ModelParams, VehicleState, rollout, step
from .scenario import Scenario, predict_traffic, traffic_poses_at

# Path-window margins for the in-horizon projection [m].
_WINDOW_BACK = 15.0
_WINDOW_AHEAD_EXTRA = 30.0


class RunAborted(Exception):
    """Raised when a closed-loop run produces a non-finite state."""


@dataclass(frozen=True)
class PlannerConfig:
    sampler: sampling.SamplerConfig
    K: int = 200
    N: int = 80
    lam: float = 5.0
    dt: float = 0.1
    weights: CostWeights = field(default_factory=CostWeights)
    model: ModelParams = field(default_factory=ModelParams)
    ellipse: EllipseParams = field(default_factory=EllipseParams)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not (self.lam > 0):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.sampler.dt != self.dt:
            raise ValueError("sampler dt must match planner dt")


@dataclass
class PlanDiagnostics:
    sample_costs: np.ndarray  # (K,) weighted totals
    ess: float  # sum(w) / max(w)
    best_cost: float
    mean_cost: float
    worst_cost: float
    chosen_cost: float
    chosen_breakdown: np.ndarray  # (5,) unweighted terms of the returned trajectory
    weight_fallback: bool = False  # True when degenerate weights forced argmin selection


def _path_window(scenario: Scenario, x0: VehicleState, cfg: PlannerConfig) -> np.ndarray:
    path = scenario.path
    ego_arc = path.arc_of_point((x0.s_x, x0.s_y))
    reach = max(x0.v, scenario.v_des) * cfg.N * cfg.dt * 1.5 + _WINDOW_AHEAD_EXTRA
    cum = path.cumulative_lengths
    j0 = int(np.clip(np.searchsorted(cum, ego_arc - _WINDOW_BACK) - 1, 0, len(cum) - 2))
    j1 = int(np.clip(np.searchsorted(cum, ego_arc + reach) + 1, j0 + 1, len(cum) - 1))
    return path.waypoints[j0 : j1 + 1]


def _desired_end(scenario: Scenario, x0: VehicleState, cfg: PlannerConfig) -> np.ndarray:
    ego_arc = scenario.path.arc_of_point((x0.s_x, x0.s_y))
    goal_arc = min(ego_arc + scenario.v_des * cfg.N * cfg.dt, scenario.total_distance)
    return scenario.path.point_at_arc(goal_arc)


def _project_steering(U_bar: np.ndarray, delta0: float, delta_max: float, dt: float) -> np.ndarray:
    """Project the warm start's steering rates so the implied steering angle stays in bounds.

    Without this, a warm start can command rates past the clamp that the
    dynamics ignore; sampled perturbations then have to overcome the dead
    command before the steering angle reacts at all.
    """
    out = U_bar.copy()
    delta = delta0
    for i in range(out.shape[0]):
        target = min(max(delta + out[i, 0] * dt, -delta_max), delta_max)
        out[i, 0] = (target - delta) / dt
        delta = target
    return out


def plan_step(
    x0: VehicleState,
    U_bar: np.ndarray,
    cfg: PlannerConfig,
    scenario: Scenario,
    rng: np.random.Generator,
    t0: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, PlanDiagnostics]:
    """One MPPI iteration from state x0; returns (U_star, X_star, diagnostics)."""
    U_bar = np.asarray(U_bar, dtype=float)
    if U_bar.shape != (cfg.N, 2):
        raise ValueError(f"warm start must have shape ({cfg.N}, 2), got {U_bar.shape}")
    if cfg.model.delta_max is not None:
        U_bar = _project_steering(U_bar, x0.delta, cfg.model.delta_max, cfg.dt)

    V = sampling.sample(cfg.sampler, cfg.N, cfg.K, rng)
    U = U_bar[None, :, :] + V

    traffic = predict_traffic(scenario, t0, cfg.N, cfg.dt)
    goal = _desired_end(scenario, x0, cfg)
    window = _path_window(scenario, x0, cfg)

    _, S = kernels.rollout_costs(
        x0.as_array(),
        U,
        cfg.dt,
        cfg.model.wheelbase,
        cfg.model.delta_max if cfg.model.delta_max is not None else np.inf,
        scenario.v_des,
        goal,
        window,
        traffic,
        cfg.ellipse.a_e,
        cfg.ellipse.b_e,
        cfg.ellipse.d_floor,
        cfg.weights.as_array(),
    )

    finite = np.isfinite(S)
    if not np.any(finite):
        raise RunAborted("all sampled trajectory costs are non-finite")
    s_min = np.min(S[finite])
    w = np.where(finite, np.exp(-(S - s_min) / cfg.lam), 0.0)
    w_sum = w.sum()
    fallback = False
    if not (w_sum > 0.0) or not np.isfinite(w_sum):
        # Degenerate weights: keep the single best sample.
        fallback = True
        w = np.zeros(cfg.K)
        w[int(np.nanargmin(np.where(finite, S, np.inf)))] = 1.0
        w_sum = 1.0

    U_star = U_bar + np.einsum("k,kij->ij", w, V) / w_sum
    X_star = rollout(x0, U_star, cfg.model)

    ctx = CostContext(
        v_des=scenario.v_des,
        goal=goal,
        path=scenario.path,
        traffic=traffic,
        ellipse=cfg.ellipse,
        weights=cfg.weights,
    )
    chosen_cost, chosen_breakdown = costs.total_cost(X_star, U_star, ctx)

    diag = PlanDiagnostics(
        sample_costs=S,
        ess=float(w_sum / w.max()),
        best_cost=float(s_min),
        mean_cost=float(np.mean(S[finite])),
        worst_cost=float(np.max(S[finite])),
        chosen_cost=chosen_cost,
        chosen_breakdown=chosen_breakdown,
        weight_fallback=fallback,
    )
    return U_star, X_star, diag


def shift_warm_start(U_star: np.ndarray) -> np.ndarray:
    """Drop the first input, shift left, repeat the last element at the tail."""
    U_star = np.asarray(U_star, dtype=float)
    out = np.empty_like(U_star)
    out[:-1] = U_star[1:]
    out[-1] = U_star[-1]
    return out


@dataclass
class StepRecord:
    t: float  # time after applying the input [s]
    state: np.ndarray  # (5,) realized state
    input: np.ndarray  # (2,) applied input
    plan_breakdown: np.ndarray  # (5,) unweighted terms of the chosen plan
    ess: float
    min_d_e: float  # smallest scaled traffic distance at the realized state


@dataclass
class RunLog:
    variant: str
    sampler: str
    seed: int | None
    dt: float
    x0: np.ndarray
    records: list[StepRecord]
    mean_plan_terms: np.ndarray  # (5,) per-step planned-trajectory terms, averaged over the run
    mean_plan_total: float  # weighted mean planning cost
    closed_loop_terms: np.ndarray  # (5,) unweighted c1..c5 of the realized run
    closed_loop_total: float  # weighted S
    min_d_e: float
    aborted: bool = False
    abort_reason: str = ""

    @property
    def states(self) -> np.ndarray:
        return np.array([r.state for r in self.records])

    @property
    def inputs(self) -> np.ndarray:
        return np.array([r.input for r in self.records])

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            header = {
                "type": "header",
                "variant": self.variant,
                "sampler": self.sampler,
                "seed": self.seed,
                "dt": self.dt,
                "x0": list(self.x0),
            }
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                rec = {
                    "type": "step",
                    "t": r.t,
                    "state": list(r.state),
                    "input": list(r.input),
                    "costs": {f"c{i + 1}": float(c) for i, c in enumerate(r.plan_breakdown)},
                    "ess": r.ess,
                    "min_d_e": r.min_d_e,
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            summary = {
                "type": "summary",
                "mean_plan_terms": {
                    f"c{i + 1}": float(c) for i, c in enumerate(self.mean_plan_terms)
                },
                "mean_plan_total": self.mean_plan_total,
                "closed_loop_terms": {
                    f"c{i + 1}": float(c) for i, c in enumerate(self.closed_loop_terms)
                },
                "closed_loop_total": self.closed_loop_total,
                "min_d_e": self.min_d_e,
                "aborted": self.aborted,
                "abort_reason": self.abort_reason,
            }
            f.write(json.dumps(summary, sort_keys=True) + "\n")

    @staticmethod
    def from_jsonl(path) -> "RunLog":
        records = []
        header = summary = None
        with open(path) as f:
            for line in f:
                doc = json.loads(line)
                if doc["type"] == "header":
                    header = doc
                elif doc["type"] == "step":
                    records.append(
                        StepRecord(
                            t=doc["t"],
                            state=np.array(doc["state"]),
                            input=np.array(doc["input"]),
                            plan_breakdown=np.array(
                                [doc["costs"][f"c{i + 1}"] for i in range(5)]
                            ),
                            ess=doc["ess"],
                            min_d_e=doc["min_d_e"],
                        )
                    )
                elif doc["type"] == "summary":
                    summary = doc
        if header is None or summary is None:
            raise ValueError(f"run log {path} is missing header or summary")
        return RunLog(
            variant=header["variant"],
            sampler=header["sampler"],
            seed=header["seed"],
            dt=header["dt"],
            x0=np.array(header["x0"]),
            records=records,
            mean_plan_terms=np.array(
                [summary["mean_plan_terms"][f"c{i + 1}"] for i in range(5)]
            ),
            mean_plan_total=summary["mean_plan_total"],
            closed_loop_terms=np.array(
                [summary["closed_loop_terms"][f"c{i + 1}"] for i in range(5)]
            ),
            closed_loop_total=summary["closed_loop_total"],
            min_d_e=summary["min_d_e"],
            aborted=summary["aborted"],
            abort_reason=summary["abort_reason"],
        )


def _min_scaled_distance(point: np.ndarray, poses: np.ndarray, e: EllipseParams) -> float:
    if poses.shape[0] == 0:
        return math.inf
    best = math.inf
    for pose in poses:
        d_e = costs.scaled_ellipse_distance(point, pose, e)
        best = min(best, d_e)
    return best


def run_receding_horizon(
    scenario: Scenario,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    T_end: float | None = None,
    seed: int | None = None,
) -> RunLog:
    """Closed-loop run: plan, apply the first input, shift, advance traffic.

    Two aggregates are reported. The primary one is the average planning cost:
    the five cost terms of the chosen planned trajectory, averaged over the
    control steps of the run. The closed-loop summary additionally evaluates
    the cost functions on the realized sequence of applied states and inputs,
    with the terminal term measured against the course goal.
    """
    t_end = scenario.T_end if T_end is None else T_end
    n_steps = int(round(t_end / cfg.dt))
    x = scenario.x0
    U_bar = np.zeros((cfg.N, 2))
    records: list[StepRecord] = []
    aborted = False
    abort_reason = ""
    for i in range(n_steps):
        t0 = i * cfg.dt
        try:
            U_star, _, diag = plan_step(x, U_bar, cfg, scenario, rng, t0=t0)
            u0 = ControlInput(float(U_star[0, 0]), float(U_star[0, 1]))
            x = step(x, u0, cfg.model)
        except (RunAborted, ValueError) as e:
            aborted = True
            abort_reason = str(e)
            break
        if not x.is_finite():
            aborted = True
            abort_reason = f"non-finite state at step {i}"
            break
        t_next = (i + 1) * cfg.dt
        poses = traffic_poses_at(scenario, t_next)
        records.append(
            StepRecord(
                t=t_next,
                state=x.as_array(),
                input=u0.as_array(),
                plan_breakdown=diag.chosen_breakdown,
                ess=diag.ess,
                min_d_e=_min_scaled_distance(x.as_array()[:2], poses, cfg.ellipse),
            )
        )
        U_bar = shift_warm_start(U_star)

    if records:
        plan_terms = np.mean([r.plan_breakdown for r in records], axis=0)
        plan_total = float(cfg.weights.as_array() @ plan_terms)
        X = np.array([r.state for r in records])
        U = np.array([r.input for r in records])
        traffic_realized = (
            np.stack(
                [
                    np.array([traffic_poses_at(scenario, r.t)[m] for r in records])
                    for m in range(len(scenario.traffic))
                ]
            )
            if scenario.traffic
            else np.zeros((0, len(records), 3))
        )
        terms = np.array(
            [
                costs.velocity_cost(X, scenario.v_des),
                costs.terminal_cost(X, scenario.goal),
                costs.smoothness_cost(U),
                costs.path_cost(X, scenario.path),
                costs.traffic_cost(X, traffic_realized, cfg.ellipse),
            ]
        )
        total = float(cfg.weights.as_array() @ terms)
        min_d_e = float(min(r.min_d_e for r in records))
    else:
        plan_terms = np.full(5, np.nan)
        plan_total = float("nan")
        terms = np.full(5, np.nan)
        total = float("nan")
        min_d_e = float("nan")

    return RunLog(
        variant=scenario.variant,
        sampler=cfg.sampler.kind.value,
        seed=seed,
        dt=cfg.dt,
        x0=scenario.x0.as_array(),
        records=records,
        mean_plan_terms=plan_terms,
        mean_plan_total=plan_total,
        closed_loop_terms=terms,
        closed_loop_total=total,
        min_d_e=min_d_e,
        aborted=aborted,
        abort_reason=abort_reason,
    )
