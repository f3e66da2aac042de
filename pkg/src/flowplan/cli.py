"""Command-line entry points: train-flow, run, benchmark, export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import flow, harness
from .mppi import RunLog
from .sampling import SamplerKind

_SAMPLER_NAMES = [k.value for k in SamplerKind]


def _add_config_arg(p):
    p.add_argument("--config", default=None, help="planner config YAML (defaults built in)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowplan",
        description="Sampling-based model-predictive trajectory planner benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-flow", help="train a per-channel noise-distribution flow model")
    p.add_argument("--channel", type=int, choices=(1, 2), required=True)
    p.add_argument("--kind", choices=("a2df", "ail"), required=True)
    p.add_argument("--out", required=True, help="output directory for model + loss CSV")
    p.add_argument("--seed", type=int, default=0)
    _add_config_arg(p)

    p = sub.add_parser("run", help="execute one closed-loop run")
    p.add_argument("--scenario", required=True, help="built-in id (static:1) or scenario YAML")
    p.add_argument("--sampler", choices=_SAMPLER_NAMES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run log output path (JSON lines)")
    p.add_argument("--models-dir", default=None, help="flow model directory (NF samplers)")
    _add_config_arg(p)

    p = sub.add_parser("benchmark", help="Monte-Carlo comparison of samplers on scenarios")
    p.add_argument(
        "--scenario",
        action="append",
        required=True,
        help="built-in id or scenario YAML; repeatable",
    )
    p.add_argument(
        "--sampler",
        action="append",
        choices=_SAMPLER_NAMES + ["all"],
        default=None,
        help="sampler to include; repeatable; default all",
    )
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory for report CSV/JSON")
    p.add_argument("--models-dir", default=None, help="flow model directory (NF samplers)")
    p.add_argument("--save-runs", action="store_true", help="also keep per-run JSONL logs")
    _add_config_arg(p)

    p = sub.add_parser("export", help="export spatial trajectory CSV from a run log")
    p.add_argument("--run", required=True, help="run log JSONL path")
    p.add_argument("--out", required=True, help="CSV output path")
    return parser


def cmd_train_flow(args) -> int:
    cfg = harness.load_config(args.config)
    model, curve = harness.train_flow_model(args.channel, args.kind, cfg, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = harness.flow_model_path(out_dir, args.kind, args.channel)
    flow.save(model, model_path)
    curve.to_csv(model_path.with_suffix(".loss.csv"))
    print(f"wrote {model_path} (final test NLL {curve.test_nll.min():.3f})")
    return 0


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    scenario = harness.resolve_scenario(args.scenario)
    kind = SamplerKind(args.sampler)
    log = harness.execute_run(scenario, kind, cfg, args.seed, models_dir=args.models_dir)
    log.to_jsonl(args.out)
    if log.aborted:
        print(f"run aborted: {log.abort_reason}", file=sys.stderr)
        return 1
    print(
        f"wrote {args.out}: {len(log.records)} steps, "
        f"mean planning S={log.mean_plan_total:.1f}, "
        f"closed-loop S={log.closed_loop_total:.1f}, min d_e={log.min_d_e:.3f}"
    )
    return 0


def cmd_benchmark(args) -> int:
    cfg = harness.load_config(args.config)
    scenarios = [harness.resolve_scenario(s) for s in args.scenario]
    names = args.sampler or ["all"]
    if "all" in names:
        kinds = list(SamplerKind)
    else:
        kinds = [SamplerKind(n) for n in dict.fromkeys(names)]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = harness.run_benchmark(
        scenarios,
        kinds,
        runs=args.runs,
        master_seed=args.seed,
        cfg=cfg,
        models_dir=args.models_dir,
        run_log_dir=out_dir if args.save_runs else None,
    )
    report.to_csv(out_dir / "report.csv")
    report.to_json(out_dir / "report.json")
    for row in report.rows:
        red = "" if row.reduction_vs_bg is None else f" ({row.reduction_vs_bg:+.0%} vs bg)"
        print(f"{row.variant} {row.sampler}: S={row.mean_total:.1f}{red}")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'report.json'}")
    return 0


def cmd_export(args) -> int:
    log = RunLog.from_jsonl(args.run)
    harness.export_spatial(log, args.out)
    print(f"wrote {args.out}: {len(log.records)} rows")
    return 0


_COMMANDS = {
    "train-flow": cmd_train_flow,
    "run": cmd_run,
    "benchmark": cmd_benchmark,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
