"""Benchmark orchestration: config files, flow-model management, Monte-Carlo runs.

Cost aggregation semantics: every reported per-term value is an average
planning cost — the cost terms of the chosen planned trajectory at each
control step, averaged over the run and then over testruns. Relative
reductions compare each sampler's mean weighted total against the BG baseline.
The closed-loop cost of the realized run is reported alongside as a
diagnostic.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import flow, mppi, sampling, trainingdata
from .costs import CostWeights, EllipseParams
from .dynamics import ModelParams
from .mppi import PlannerConfig, RunLog, run_receding_horizon
from .sampling import SamplerKind
from .scenario import Scenario, builtin_scenario, load_scenario

DEFAULT_CONFIG = {
    "dt": 0.1,
    "N": 80,
    "K": 200,
    "lambda": 5.0,
    "alpha": [0.5, 10.0, 0.06, 1.0, 4.5],
    "wheelbase": 2.7,
    "delta_max": 0.45,
    "sigma_bg": [0.1, 2.0],
    "sigma_il": [0.045, 1.1],
    "sigma_2df_1": [0.03, 0.075],
    "sigma_2df_2": [0.045, 0.09],
    "ellipse": {"a_e": 6.0, "b_e": 2.0, "d_floor": 1e-3},
    "training": {
        "B": 400,
        "split": 0.6,
        "lr": 3e-4,
        "batch_size": 64,
        "jitter": 0.5,
        "weight_decay": 1e-4,
        "patience": 200,
        "n_layers": 16,
        "hidden": 128,
        "a2df": {"steps": 650, "eps_switch": 220.0, "eps_draw": [0.03, 0.9]},
        "ail": {"steps": 1100, "eps_switch": 350.0, "eps_draw": [0.045, 1.1]},
    },
}


def load_config(path=None) -> dict:
    """Defaults overlaid with an optional YAML config file."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            user = yaml.safe_load(f) or {}
        _deep_update(cfg, user)
    return cfg


def _deep_update(base: dict, update: dict) -> None:
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def resolve_scenario(spec: str) -> Scenario:
    """A built-in id like 'static:1' or a path to a scenario YAML file."""
    if ":" in spec and not os.path.exists(spec):
        return builtin_scenario(spec)
    return load_scenario(spec)


# -- flow model management -----------------------------------------------

_KIND_TO_FILE_TAG = {SamplerKind.NF_A2DF: "a2df", SamplerKind.NF_AIL: "ail"}


def flow_model_path(models_dir, kind_tag: str, channel: int) -> Path:
    return Path(models_dir) / f"{kind_tag}_ch{channel}.nfm"


def train_flow_model(
    channel: int, kind_tag: str, cfg: dict, seed: int
) -> tuple[flow.FlowModel, flow.LossCurve]:
    """Generate the channel's training batch and fit a flow to it."""
    if channel not in (1, 2):
        raise ValueError(f"channel must be 1 or 2, got {channel}")
    if kind_tag not in ("a2df", "ail"):
        raise ValueError(f"kind must be 'a2df' or 'ail', got {kind_tag!r}")
    tr = cfg["training"]
    kcfg = tr[kind_tag]
    rng = np.random.default_rng(seed)
    if kind_tag == "a2df":
        eps = kcfg["eps_draw"][channel - 1]
        h = trainingdata.HeuristicParams(
            eps_switch=kcfg["eps_switch"], eps_draw_1=eps, eps_draw_2=eps
        )
        batch = trainingdata.generate_a2df(tr["B"], cfg["N"], h, rng, dt=cfg["dt"], seed=seed)
    else:
        eps = kcfg["eps_draw"][channel - 1]
        batch = trainingdata.generate_ail(
            tr["B"], cfg["N"], eps, kcfg["eps_switch"], rng, seed=seed
        )
    tcfg = flow.TrainConfig(
        steps=kcfg["steps"],
        patience=tr["patience"],
        split=tr["split"],
        batch_size=tr["batch_size"],
        lr=tr["lr"],
        jitter=tr["jitter"],
        weight_decay=tr["weight_decay"],
        seed=seed,
    )
    metadata = {"channel": channel, "kind": kind_tag, "generation": batch.params, "seed": seed}
    return flow.train(
        batch.rows, tcfg, n_layers=tr["n_layers"], hidden=tr["hidden"], metadata=metadata
    )


def ensure_flow_models(models_dir, kind: SamplerKind, cfg: dict, seed: int) -> tuple:
    """Load the two per-channel models for an NF sampler, training any that are missing."""
    tag = _KIND_TO_FILE_TAG[kind]
    models = []
    Path(models_dir).mkdir(parents=True, exist_ok=True)
    for channel in (1, 2):
        path = flow_model_path(models_dir, tag, channel)
        if path.exists():
            models.append(flow.load(path))
        else:
            model_seed = _derive_seed(seed, "train", tag, str(channel))
            model, curve = train_flow_model(channel, tag, cfg, model_seed)
            flow.save(model, path)
            curve.to_csv(path.with_suffix(".loss.csv"))
            models.append(model)
    return tuple(models)


# -- planner assembly ----------------------------------------------------


def make_sampler_config(kind: SamplerKind, cfg: dict, flow_models=None) -> sampling.SamplerConfig:
    dt = cfg["dt"]
    if kind == SamplerKind.BG:
        return sampling.SamplerConfig(kind, dt, sigma=tuple(cfg["sigma_bg"]))
    if kind == SamplerKind.IL:
        return sampling.SamplerConfig(kind, dt, sigma=tuple(cfg["sigma_il"]))
    if kind == SamplerKind.TWO_DF:
        return sampling.SamplerConfig(
            kind, dt, sigma1=tuple(cfg["sigma_2df_1"]), sigma2=tuple(cfg["sigma_2df_2"])
        )
    return sampling.SamplerConfig(kind, dt, flow_models=flow_models)


def make_planner_config(kind: SamplerKind, cfg: dict, flow_models=None) -> PlannerConfig:
    e = cfg["ellipse"]
    return PlannerConfig(
        sampler=make_sampler_config(kind, cfg, flow_models),
        K=cfg["K"],
        N=cfg["N"],
        lam=cfg["lambda"],
        dt=cfg["dt"],
        weights=CostWeights(tuple(cfg["alpha"])),
        model=ModelParams(wheelbase=cfg["wheelbase"], dt=cfg["dt"], delta_max=cfg["delta_max"]),
        ellipse=EllipseParams(e["a_e"], e["b_e"], e["d_floor"]),
    )


def _derive_seed(master: int, *parts: str) -> int:
    payload = "|".join([str(master), *parts]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def execute_run(
    scenario: Scenario, kind: SamplerKind, cfg: dict, seed: int, models_dir=None
) -> RunLog:
    flow_models = None
    if kind in (SamplerKind.NF_A2DF, SamplerKind.NF_AIL):
        if models_dir is None:
            raise ValueError(f"{kind.value} sampling requires a models directory")
        flow_models = ensure_flow_models(models_dir, kind, cfg, seed=0)
    planner = make_planner_config(kind, cfg, flow_models)
    rng = np.random.default_rng(seed)
    return run_receding_horizon(scenario, planner, rng, seed=seed)


# -- benchmark -----------------------------------------------------------

_COST_SEMANTICS = (
    "average planning costs: per-step cost terms of the chosen planned trajectory, "
    "averaged over each run and over testruns; closed_loop_S is the weighted cost of "
    "the realized closed-loop trajectory (diagnostic)"
)


@dataclass
class BenchmarkRow:
    variant: str
    sampler: str
    runs: int
    aborted_runs: int
    mean_terms: np.ndarray  # (5,) unweighted average planning cost terms
    mean_total: float  # weighted average planning cost
    mean_closed_loop: float  # weighted closed-loop cost of the realized runs (diagnostic)
    min_d_e: float  # smallest over all runs
    reduction_vs_bg: float | None = None  # (S_bg - S) / S_bg on the planning-cost means


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow]
    master_seed: int
    runs_per_cell: int
    config_hash: str

    def to_json(self, path) -> None:
        doc = {
            "cost_semantics": _COST_SEMANTICS,
            "master_seed": self.master_seed,
            "runs_per_cell": self.runs_per_cell,
            "config_hash": self.config_hash,
            "rows": [
                {
                    "variant": r.variant,
                    "sampler": r.sampler,
                    "runs": r.runs,
                    "aborted_runs": r.aborted_runs,
                    **{f"c{i + 1}": float(c) for i, c in enumerate(r.mean_terms)},
                    "S": r.mean_total,
                    "closed_loop_S": r.mean_closed_loop,
                    "min_d_e": r.min_d_e,
                    "reduction_vs_bg": r.reduction_vs_bg,
                }
                for r in self.rows
            ],
        }
        with open(path, "w") as f:
            json.dump(doc, f, sort_keys=True, indent=2)
            f.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"# {_COST_SEMANTICS}\n")
            f.write(
                "variant,sampler,runs,aborted_runs,c1,c2,c3,c4,c5,S,closed_loop_S,"
                "min_d_e,reduction_vs_bg\n"
            )
            for r in self.rows:
                terms = ",".join(repr(float(c)) for c in r.mean_terms)
                red = "" if r.reduction_vs_bg is None else repr(r.reduction_vs_bg)
                f.write(
                    f"{r.variant},{r.sampler},{r.runs},{r.aborted_runs},{terms},"
                    f"{r.mean_total!r},{r.mean_closed_loop!r},{r.min_d_e!r},{red}\n"
                )


def run_benchmark(
    scenarios: list[Scenario],
    kinds: list[SamplerKind],
    runs: int,
    master_seed: int,
    cfg: dict,
    models_dir=None,
    run_log_dir=None,
) -> BenchmarkReport:
    """Execute runs x samplers x scenarios with derived seeds and aggregate."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    flow_cache: dict[SamplerKind, tuple] = {}
    rows: list[BenchmarkRow] = []
    for scen in scenarios:
        per_sampler: dict[str, BenchmarkRow] = {}
        for kind in kinds:
            flow_models = None
            if kind in (SamplerKind.NF_A2DF, SamplerKind.NF_AIL):
                if kind not in flow_cache:
                    if models_dir is None:
                        raise ValueError(f"{kind.value} sampling requires a models directory")
                    flow_cache[kind] = ensure_flow_models(models_dir, kind, cfg, seed=0)
                flow_models = flow_cache[kind]
            planner = make_planner_config(kind, cfg, flow_models)
            terms = []
            totals = []
            closed = []
            min_des = []
            aborted = 0
            for r in range(runs):
                seed = _derive_seed(master_seed, scen.variant, kind.value, str(r))
                rng = np.random.default_rng(seed)
                log = run_receding_horizon(scen, planner, rng, seed=seed)
                if run_log_dir is not None:
                    name = f"{scen.variant.replace(':', '_')}_{kind.value}_{r}.jsonl"
                    log.to_jsonl(Path(run_log_dir) / name)
                if log.aborted:
                    aborted += 1
                    continue
                terms.append(log.mean_plan_terms)
                totals.append(log.mean_plan_total)
                closed.append(log.closed_loop_total)
                min_des.append(log.min_d_e)
            if terms:
                mean_terms = np.mean(np.array(terms), axis=0)
                mean_total = float(np.mean(totals))
                mean_closed = float(np.mean(closed))
                min_d_e = float(np.min(min_des))
            else:
                mean_terms = np.full(5, np.nan)
                mean_total = float("nan")
                mean_closed = float("nan")
                min_d_e = float("nan")
            row = BenchmarkRow(
                variant=scen.variant,
                sampler=kind.value,
                runs=runs,
                aborted_runs=aborted,
                mean_terms=mean_terms,
                mean_total=mean_total,
                mean_closed_loop=mean_closed,
                min_d_e=min_d_e,
            )
            per_sampler[kind.value] = row
            rows.append(row)
        bg = per_sampler.get(SamplerKind.BG.value)
        if bg is not None and np.isfinite(bg.mean_total) and bg.mean_total != 0.0:
            for row in per_sampler.values():
                row.reduction_vs_bg = float((bg.mean_total - row.mean_total) / bg.mean_total)
    return BenchmarkReport(
        rows=rows,
        master_seed=master_seed,
        runs_per_cell=runs,
        config_hash=config_hash(cfg),
    )


def export_spatial(run_log: RunLog, path) -> None:
    """CSV of (t, s_x, s_y, v, psi) per control step, for plotting."""
    with open(path, "w") as f:
        f.write("t,s_x,s_y,v,psi\n")
        for rec in run_log.records:
            s = rec.state
            f.write(
                f"{float(rec.t)!r},{float(s[0])!r},{float(s[1])!r},"
                f"{float(s[3])!r},{float(s[4])!r}\n"
            )
