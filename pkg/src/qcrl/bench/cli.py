"""Command-line entry point: ``qcrl {train,evaluate,compare,diag,plot,tasks}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_setting, dump_config, load_config, normalize_algo
from .tasks import UnknownTask, get_task, registry

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _common(p: argparse.ArgumentParser, algo: bool = True):
    p.add_argument("--task", help="task name (see 'tasks')")
    if algo:
        p.add_argument("--algo", help="at-drl | ddpg | dqn")
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        load_config(args.config, cfg)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        apply_setting(cfg, key, value)
    if args.task:
        cfg.task = args.task
    if getattr(args, "algo", None):
        cfg.algo = normalize_algo(args.algo)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.episodes is not None:
        cfg.episodes = args.episodes
    return cfg.validate()


def cmd_tasks(args) -> int:
    for t in registry():
        print(f"{t.name:<22} {t.model:<18} dt={t.dt:.5f} n_max={t.n_max:<3} {t.description}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .runner import train

    cfg = _build_config(args)
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.task}_{cfg.algo}_seed{cfg.seed}"

    def progress(ep, log_):
        r = log_.eval_rows[-1]
        print(f"episode {ep:>6}  eval fidelity {r.mean_eval_fidelity:.4f}  eval return {r.mean_eval_return:.1f}",
              flush=True)

    log_ = train(cfg, out_dir=out, resume=args.resume, stop_after=args.stop_after,
                 plots=not args.no_plots, progress=None if args.quiet else progress)
    print(f"final fidelity (mean of last 100 episodes): {log_.final_fidelity():.4f}")
    print(f"best greedy evaluation fidelity: {log_.best_eval_fidelity:.4f}")
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .runner import evaluate_checkpoint

    res = evaluate_checkpoint(args.checkpoint, episodes=args.episodes or 10, out_dir=args.out)
    print(json.dumps(res, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .compare import compare, format_table

    cfg = _build_config(args)
    algos = [normalize_algo(a) for a in args.algos.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out) if args.out else Path("runs") / f"compare_{cfg.task}"
    res = compare(cfg.task, algos, seeds, cfg.episodes, base=cfg, out_dir=out, workers=args.workers)
    print(format_table(res))
    print(f"outputs written to {out}")
    return EXIT_OK


def cmd_diag(args) -> int:
    from .diag import diag

    task = get_task(args.task or "oq_10")
    if args.subspace:
        task = task.with_overrides(subspace_mode=True)
    rep = diag(task, n_checks=args.checks)
    print(rep.format())
    return EXIT_OK if rep.gradcheck["passed"] else EXIT_RUNTIME


def cmd_plot(args) -> int:
    from .plotting import emit_plots
    from .runner import read_run_dir

    logs = [read_run_dir(d) for d in args.runs]
    paths = emit_plots(logs, args.out or args.runs[0])
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_config(args) -> int:
    print(dump_config(_build_config(args)), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcrl", description="Quantum-control reinforcement learning benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tasks", help="list registered tasks")
    p.set_defaults(func=cmd_tasks)

    p = sub.add_parser("train", help="train one agent")
    _common(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", type=int, help="stop after this episode (resumable)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy rollouts from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train several algorithms over several seeds")
    _common(p, algo=False)
    p.add_argument("--algos", default="at-drl,ddpg,dqn")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diag", help="reachability and gradient preflight")
    p.add_argument("--task")
    p.add_argument("--subspace", action="store_true", help="use the single-excitation chain model")
    p.add_argument("--checks", type=int, default=50)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("plot", help="render figures from run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("config", help="print the fully resolved configuration")
    _common(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UnknownTask) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
