"""Command-line entry point: ``rce {gen-data,train,plan,eval,sweep}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io, metrics
from .experiment import (REPORT_COLUMNS, TRACE_COLUMNS, Task, plan_runs, report_row,
                         run_experiment, trace_rows, write_frame_strip)
from .planar import EnvConfig, generate_dataset
from .planner import PlanConfig
from .training import (ConfigError, NumericError, TrainConfig, TrainingAborted, train,
                       write_metrics)

log = logging.getLogger("rce")


def _env(args) -> EnvConfig:
    if args.env != "planar":
        raise ConfigError(f"unknown environment {args.env!r}; only 'planar' is implemented")
    return EnvConfig().with_sigma(args.sigma)


PRESETS = {"planar": TrainConfig.planar, "plain": TrainConfig}


def _train_config(path: str | None, preset: str = "planar",
                  seed_override: int | None = None) -> TrainConfig:
    d = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    if not isinstance(d, dict):
        raise ConfigError("training config must be a JSON object")
    cfg = TrainConfig.from_dict({**PRESETS[preset]().to_dict(), **d})
    seed = cfg.seed if seed_override is None else seed_override
    return dataclasses.replace(cfg, seed=io.resolve_seed(seed))


def cmd_gen_data(args) -> None:
    cfg = _env(args)
    seed = io.resolve_seed(args.seed)
    data = generate_dataset(cfg, args.n, seed)
    io.save_dataset(args.out, data)
    log.info("wrote %d triples (sigma=%g, seed=%d) to %s", args.n, args.sigma, seed, args.out)


def cmd_train(args) -> None:
    data = io.load_dataset(args.data)
    cfg = _train_config(args.config, args.preset)
    conf = cfg.to_dict()
    result = train(data, cfg, on_checkpoint=lambda p, e: io.save_checkpoint(args.out, p, conf, e))
    io.save_checkpoint(args.out, result.params, conf, cfg.epochs)
    if args.metrics:
        write_metrics(args.metrics, result.metrics)


def cmd_plan(args) -> None:
    params, header = io.load_checkpoint(args.ckpt)
    env_cfg = _env(args)
    seed = io.resolve_seed(args.seed)
    plan_cfg = PlanConfig(horizon=args.horizon, ilqr_iters=args.ilqr_iters)
    task = Task(steps=args.steps)
    traces = plan_runs(params, env_cfg, args.runs, seed, plan_cfg, task,
                       keep_frames=args.png)
    conf = {"checkpoint": header, "env": env_cfg.to_dict(), "runs": args.runs,
            "horizon": args.horizon, "ilqr_iters": args.ilqr_iters, "steps": args.steps}
    rows = []
    for k, tr in enumerate(traces):
        J, failed = metrics.planning_loss(tr, task.goal)
        rows.append([k, J, int(metrics.succeeded(tr.states, task.goal) and not failed),
                     int(failed)])
    io.write_report(args.report, ["run", "planning_loss", "success", "planner_failed"], rows,
                    conf, seed)
    if args.trace_dir:
        out = Path(args.trace_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, tr in enumerate(traces):
            io.write_report(out / f"trace_{k:03d}.csv", TRACE_COLUMNS, trace_rows(tr), conf, seed)
            if args.png:
                write_frame_strip(out / f"trace_{k:03d}.png", tr.frames)
    log.info("success rate %.2f over %d runs", metrics.success_rate(traces, task.goal), args.runs)


def cmd_eval(args) -> None:
    params, header = io.load_checkpoint(args.ckpt)
    data = io.load_dataset(args.data)
    rec = metrics.mean_std(metrics.reconstruction_losses(params, data))
    pred = metrics.mean_std(metrics.prediction_losses(params, data))
    conf = {"checkpoint": header, "data": {k: data.meta.get(k) for k in ("n", "sigma", "seed")}}
    io.write_report(args.report, ["reconstruction_loss", "reconstruction_std",
                                  "prediction_loss", "prediction_std"],
                    [[*rec, *pred]], conf, io.resolve_seed(data.meta.get("seed") or 0))


def cmd_sweep(args) -> None:
    sigmas = [float(s) for s in args.sigmas.split(",") if s.strip()]
    if not sigmas:
        raise ConfigError("--sigmas is empty")
    seed = io.resolve_seed(args.seed)
    cfg = _train_config(args.config, args.preset, seed)
    rows = []
    for sigma in sigmas:
        rep, _, _ = run_experiment(sigma, cfg, args.n, args.test_n, args.runs, seed,
                                   PlanConfig(horizon=args.horizon))
        log.info("sigma %g: %s", sigma, rep)
        rows.append(report_row(rep))
    conf = {"train": cfg.to_dict(), "sigmas": sigmas, "n": args.n, "test_n": args.test_n,
            "runs": args.runs, "horizon": args.horizon}
    io.write_report(args.out, REPORT_COLUMNS, rows, conf, seed)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rce", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample observation triples")
    g.add_argument("--env", default="planar")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit the model to a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="JSON training config; overrides the preset")
    t.add_argument("--preset", choices=sorted(PRESETS), default="planar")
    t.add_argument("--out", required=True)
    t.add_argument("--metrics", help="per-epoch metrics CSV")
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", help="receding-horizon control from a checkpoint")
    pl.add_argument("--ckpt", required=True)
    pl.add_argument("--env", default="planar")
    pl.add_argument("--sigma", type=float, default=0.0)
    pl.add_argument("--runs", type=int, default=20)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--steps", type=int, default=40)
    pl.add_argument("--horizon", type=int, default=40)
    pl.add_argument("--ilqr-iters", type=int, default=10)
    pl.add_argument("--report", required=True)
    pl.add_argument("--trace-dir", help="write one trace CSV per run here")
    pl.add_argument("--png", action="store_true", help="also write a frame strip per run")
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("eval", help="reconstruction and prediction losses on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate at several noise levels")
    s.add_argument("--sigmas", default="0,1,2,5")
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--test-n", type=int, default=1000)
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=int, default=40)
    s.add_argument("--config")
    s.add_argument("--preset", choices=sorted(PRESETS), default="planar")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    if args.command == "plan" and args.png and not args.trace_dir:
        print("rce: error: --png needs --trace-dir", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except (ConfigError, io.FormatError, NumericError, TrainingAborted, OSError, ValueError,
            json.JSONDecodeError, TypeError) as err:
        print(f"rce: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
