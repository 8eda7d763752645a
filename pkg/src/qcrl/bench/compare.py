from __future__ import annotations

import copy
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, normalize_algo
from .plotting import plot_overlay, rolling_mean
from .runner import train

CURVE_WINDOW = 50


@dataclass
class ComparisonResult:
    task: str
    logs: dict = field(default_factory=dict)  # (algo, seed) -> RunLog

    def final(self, algo: str) -> list[float]:
        return [lg.final_fidelity() for (a, _), lg in sorted(self.logs.items()) if a == algo]

    @property
    def algos(self) -> list[str]:
        seen = []
        for a, _ in self.logs:
            if a not in seen:
                seen.append(a)
        return seen

    def table(self) -> list[dict]:
        rows = []
        for algo in self.algos:
            f = np.array(self.final(algo))
            rows.append({
                "algo": algo,
                "seeds": len(f),
                "mean_final_fidelity": float(f.mean()),
                "std_final_fidelity": float(f.std()),
                "per_seed": [float(x) for x in f],
            })
        return rows

    def curves(self, window: int = CURVE_WINDOW) -> dict:
        out = {}
        for algo in self.algos:
            runs = [rolling_mean(lg.fidelities, window) for (a, _), lg in sorted(self.logs.items()) if a == algo]
            n = min(len(r) for r in runs)
            stack = np.stack([r[:n] for r in runs])
            out[algo] = (np.arange(1, n + 1), stack.mean(axis=0), stack.std(axis=0))
        return out


def _run_one(args) -> tuple:
    cfg, out_dir = args
    return (cfg.algo, cfg.seed), train(cfg, out_dir=out_dir, plots=out_dir is not None)


def compare(task: str, algos, seeds, episodes: int | None = None, base: RunConfig | None = None,
            out_dir=None, workers: int = 1) -> ComparisonResult:
    """Train every (algorithm, seed) pair and summarize final fidelities.

    The final fidelity of a run is the mean over its last 100 training
    episodes.  Runs are independent; with ``workers > 1`` they execute in
    separate processes and are merged afterwards.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    jobs = []
    for algo in algos:
        for seed in seeds:
            cfg = copy.deepcopy(base) if base is not None else RunConfig()
            cfg.task = task
            cfg.algo = normalize_algo(algo)
            cfg.seed = int(seed)
            if episodes is not None:
                cfg.episodes = episodes
            run_dir = None if out_dir is None else Path(out_dir) / f"{cfg.algo}_seed{seed}"
            jobs.append((cfg.validate(), run_dir))
    result = ComparisonResult(task)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_run_one, jobs))
    else:
        pairs = [_run_one(j) for j in jobs]
    for key, lg in pairs:
        result.logs[key] = lg
    if out_dir is not None:
        write_comparison(result, out_dir)
    return result


def write_comparison(result: ComparisonResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "comparison.csv"
    with table_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algo", "seeds", "mean_final_fidelity", "std_final_fidelity", "per_seed", "schema_version"])
        for row in result.table():
            w.writerow([row["algo"], row["seeds"], repr(row["mean_final_fidelity"]),
                        repr(row["std_final_fidelity"]), " ".join(repr(x) for x in row["per_seed"]), 1])
    curves = result.curves()
    curve_path = out / "curves.csv"
    with curve_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algo", "episode", "mean_fidelity", "std_fidelity", "schema_version"])
        for algo, (x, mean, std) in curves.items():
            for e, m, s in zip(x, mean, std):
                w.writerow([algo, int(e), repr(float(m)), repr(float(s)), 1])
    fig = plot_overlay(curves, out / "comparison.svg", title=f"{result.task}: training fidelity, mean ± std over seeds")
    return [table_path, curve_path, fig]


def format_table(result: ComparisonResult) -> str:
    lines = [f"{'algo':<8} {'seeds':>5} {'mean':>8} {'std':>8}"]
    for row in result.table():
        lines.append(f"{row['algo']:<8} {row['seeds']:>5} {row['mean_final_fidelity']:>8.4f} {row['std_final_fidelity']:>8.4f}")
    return "\n".join(lines)



