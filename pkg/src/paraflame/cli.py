"""``paraflame generate|train|eval|selftest``.

Exit codes: 0 success, 1 selftest failure, 2 solver or numeric failure,
3 training divergence, 64 usage or configuration error.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, RunConfig, load_config
from .evaluation import (error_vs_time, front_length, long_term_stats, rollout,
                         write_corr_csv, write_series_csv, MetricSeries)
from .models import Checkpoint, load_checkpoint, save_checkpoint
from .selftest import FAULTS, run_selftest
from .solver import IntegrationError, SolverStepper
from .training import (Adam, TrainingDivergence, config_dict, read_history, train,
                       write_history)

EXIT_OK, EXIT_SELFTEST, EXIT_NUMERIC, EXIT_DIVERGED, EXIT_USAGE = 0, 1, 2, 3, 64
METRICS = ("err", "len", "corr")
METRIC_FILES = {"err": "err.csv", "len": "length.csv", "corr": "corr.csv"}
LAST = "last."  # extra-blob prefix for the final weights, so a resume continues exactly


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(*parts) -> None:
    print(*parts, flush=True)


# -- generate ------------------------------------------------------------------------

def cmd_generate(args, cfg: RunConfig) -> int:
    plan = cfg.dataset.plan(args.scale, args.split, args.seed)
    for line in plan.summary():
        _say(line)
    if args.dry_run:
        return EXIT_OK
    if args.out is None:
        raise UsageError("--out is required unless --dry-run is given")
    data = ds.generate(plan, workers=args.workers)
    ds.save(data, args.out)
    _say(f"wrote {args.out}: {len(data)} records, {data.frame_count} frames")
    return EXIT_OK


# -- train ---------------------------------------------------------------------------

def _history_path(args) -> Path:
    return Path(args.history) if args.history else Path(args.out).with_name("history.csv")


def cmd_train(args, cfg: RunConfig) -> int:
    seed = cfg.train.seed if args.seed is None else args.seed
    tcfg = cfg.train.to_train_config(seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    train_set = ds.load(args.data)
    valid_set = ds.load(args.valid) if args.valid else None
    if valid_set is not None and (valid_set.n != train_set.n or valid_set.equation != train_set.equation):
        raise UsageError("validation set does not match the training set grid or equation")

    start, best_loss, best_epoch, opt = 0, math.inf, -1, Adam(decoupled=tcfg.decoupled_decay)
    best_state = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model = ckpt.model
        start = int(ckpt.meta["epochs_done"])
        best_loss, best_epoch = float(ckpt.meta["best_loss"]), int(ckpt.meta["best_epoch"])
        best_state = model.state_dict()
        opt.load_state_arrays(ckpt.extra, ckpt.meta["adam_t"])
        last = {k[len(LAST):]: v for k, v in ckpt.extra.items() if k.startswith(LAST)}
        if last:
            model.load_state_dict(last)
    else:
        model = cfg.model.build(train_set.n, np.unique(train_set.gammas), seed=seed)
    if model.spec.n != train_set.n:
        raise UsageError(f"dataset N={train_set.n} does not match model N={model.spec.n}")

    remaining = max(0, tcfg.epochs - start)
    history = _history_path(args)
    for path in (Path(args.out), history):
        path.parent.mkdir(parents=True, exist_ok=True)
    _say(f"training {model.kind} ({model.num_parameters()} parameters) on {len(train_set)} records, "
         f"epochs {start}..{start + remaining - 1}")
    if not args.resume:
        write_history([], history)

    def log(row):
        write_history([row], history, append=True)
        _say(f"epoch {row['epoch']:4d}  lr {row['lr']:.3g}  train {row['train_loss']:.6f}  "
             f"valid {row['valid_loss']:.6f}")

    result = train(model, train_set, valid_set, replace(tcfg, epochs=remaining), start_epoch=start,
                   optimizer=opt, log=log, best_loss=best_loss, best_epoch=best_epoch,
                   best_state=best_state)
    meta = {"equation": train_set.equation, "train": config_dict(tcfg),
            "epochs_done": result.epochs_done, "best_epoch": result.best_epoch,
            "best_loss": result.best_loss, "adam_t": opt.t,
            "gammas": sorted(float(g) for g in np.unique(train_set.gammas))}
    extra = opt.state_arrays()
    extra.update({LAST + k: v for k, v in result.last_state.items()})
    save_checkpoint(Checkpoint(model, meta, extra), args.out)
    _say(f"wrote {args.out} (best epoch {result.best_epoch}, loss {result.best_loss:.6f}); "
         f"history in {history} ({len(read_history(history))} rows)")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------------

def _parse_metrics(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS]
    if not names or bad:
        raise UsageError(f"--metrics takes a comma list of {','.join(METRICS)}; got {text!r}")
    return names


def cmd_eval(args, cfg: RunConfig) -> int:
    metrics = _parse_metrics(args.metrics)
    ecfg = cfg.eval
    data = ds.load(args.data) if args.data else None
    equation, n, label = cfg.dataset.equation, cfg.dataset.n, "solver"
    if args.model == "solver":
        model = SolverStepper(equation, dt=cfg.dataset.dt)
    else:
        ckpt = load_checkpoint(args.model)
        model, label = ckpt.model, ckpt.model.kind
        equation, n = ckpt.meta.get("equation", equation), model.spec.n
    if data is not None:
        equation = data.equation
        if data.n != n:
            raise UsageError(f"dataset N={data.n} does not match model N={n}")
    if isinstance(model, SolverStepper):
        model = SolverStepper(equation, dt=cfg.dataset.dt)
    gamma = args.gamma if args.gamma is not None else (ecfg.gamma or cfg.dataset.gammas[0])
    seed = ecfg.seed if args.seed is None else args.seed
    steps = ecfg.steps if args.steps is None else args.steps
    ic = args.ic or ecfg.ic
    phi0 = np.zeros(n) if ic == "flat" else ds.sample_initial_condition(n, seed)
    dt = cfg.dataset.dt
    meta = {"model": label, "gamma": gamma, "seed": seed}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if "err" in metrics:
        if data is not None:
            records = [r for r in data.records if r.gamma == gamma]
            if not records:
                raise UsageError(f"no record with gamma={gamma:g} in {args.data}")
            reference = records[0].frames[: steps + 1]
            dt = records[0].dt
        else:
            solver = SolverStepper(equation, dt=dt)
            reference = np.vstack([phi0, rollout(solver, phi0, gamma, steps)])
        series = error_vs_time(model, reference, gamma, dt, label)
        write_series_csv(out / METRIC_FILES["err"], series, ("t", "e"), meta)
        _say(f"err: {len(series.values)} rows, final error {series.values[-1]:.4g}")
    if "len" in metrics:
        traj = np.vstack([phi0, rollout(model, phi0, gamma, steps)])
        series = MetricSeries(dt * np.arange(len(traj)), front_length(traj), label, gamma)
        write_series_csv(out / METRIC_FILES["len"], series, ("t", "L"), meta)
        _say(f"len: {len(series.values)} rows, final length {series.values[-1]:.6f}")
    if "corr" in metrics:
        stats = long_term_stats(model, gamma, n=n, seed=seed, burn_in=ecfg.burn_in,
                                samples=ecfg.samples, every=ecfg.every, dt=dt, phi0=phi0, label=label)
        write_corr_csv(out / METRIC_FILES["corr"], stats.curve, meta)
        _say(f"corr: {stats.frames_used} frames, mean length {stats.mean_length:.6f}"
             + (" (diverged)" if stats.diverged else ""))
    return EXIT_OK


# -- selftest ------------------------------------------------------------------------

def cmd_selftest(args, cfg: RunConfig) -> int:
    results = run_selftest(args.inject_fault)
    for r in results:
        _say(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        _say(f"selftest FAILED: {', '.join(failed)}")
        return EXIT_SELFTEST
    _say(f"selftest passed ({len(results)} checks)")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="paraflame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="integrate the solver and write a trajectory file")
    g.add_argument("config", nargs="?", help="TOML run configuration")
    g.add_argument("--out", help="output trajectory file")
    g.add_argument("--scale", choices=("full", "desk"), default="desk")
    g.add_argument("--split", choices=("train", "valid"), default="train")
    g.add_argument("--seed", type=int, help="base seed (overrides [dataset] seed)")
    g.add_argument("--workers", type=int, help="process count (default PARAFLAME_THREADS or CPUs)")
    g.add_argument("--dry-run", action="store_true", help="print the plan only")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit an operator network")
    t.add_argument("config", nargs="?")
    t.add_argument("--data", required=True, help="training trajectory file")
    t.add_argument("--valid", help="validation trajectory file")
    t.add_argument("--out", required=True, help="checkpoint to write")
    t.add_argument("--seed", type=int, help="overrides [train] seed")
    t.add_argument("--epochs", type=int, help="total epochs (overrides [train] epochs)")
    t.add_argument("--history", help="history CSV (default: history.csv next to --out)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="write metric CSVs for a checkpoint or the solver")
    e.add_argument("model", help="checkpoint file, or 'solver' for the reference solver")
    e.add_argument("config", nargs="?")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="reference trajectories for the err metric")
    src.add_argument("--solver-reference", action="store_true",
                     help="compute the reference trajectory with the solver")
    e.add_argument("--metrics", required=True, help="comma list of err,len,corr")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--gamma", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--steps", type=int)
    e.add_argument("--ic", choices=("random", "flat"))
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="gradient, spectral and band-map checks")
    s.add_argument("config", nargs="?", help=argparse.SUPPRESS)
    s.add_argument("--inject-fault", choices=sorted(FAULTS), help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, UsageError, ds.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"paraflame {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"paraflame {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ds.GenerationError, IntegrationError, FloatingPointError) as exc:
        print(f"paraflame {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
