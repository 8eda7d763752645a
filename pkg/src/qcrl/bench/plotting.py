"""Static SVG figures: learning curves, pulse sequences, algorithm overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "qcrl",
    "svg.fonttype": "none",
}
COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown")


def rolling_mean(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for i in range(x.size):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_learning(log_, path, window: int = 50) -> Path:
    eps = np.array([r.episode for r in log_.rows])
    ev_eps = np.array([r.episode for r in log_.eval_rows])
    with plt.rc_context(STYLE):
        fig, (ax_f, ax_r) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        ax_f.plot(eps, rolling_mean(log_.fidelities, window), color=COLORS[0], label=f"train (mean of {window})")
        ax_f.plot(ev_eps, [r.mean_eval_fidelity for r in log_.eval_rows], "o-", ms=3, color=COLORS[1], label="greedy eval")
        ax_f.set_ylabel("fidelity")
        ax_f.set_ylim(-0.02, 1.02)
        ax_f.legend(loc="lower right")
        ax_r.plot(eps, rolling_mean(log_.returns, window), color=COLORS[0], label="train")
        ax_r.plot(ev_eps, [r.mean_eval_return for r in log_.eval_rows], "o-", ms=3, color=COLORS[1], label="greedy eval")
        ax_r.set_ylabel("episode return")
        ax_r.set_xlabel("episode")
        ax_f.set_title(log_.meta.get("task", "") + " " + log_.label)
        fig.tight_layout()
        return _save(fig, path)


def plot_pulses(trace, path, title: str = "") -> Path:
    actions = np.array(trace.actions).reshape(len(trace.actions), -1)
    steps = np.arange(1, len(actions) + 1)
    with plt.rc_context(STYLE):
        fig, (ax_u, ax_f) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
        for j in range(actions.shape[1]):
            ax_u.step(steps, actions[:, j], where="mid", color=COLORS[j % len(COLORS)], label=f"u{j + 1}")
        ax_u.set_ylabel("control amplitude")
        ax_u.set_ylim(-1.1, 1.1)
        if actions.shape[1] <= 8:
            ax_u.legend(loc="upper right", ncol=min(actions.shape[1], 4))
        ax_f.plot(np.arange(len(trace.fidelities)), trace.fidelities, "o-", ms=3, color=COLORS[0])
        ax_f.set_ylabel("fidelity")
        ax_f.set_xlabel("step")
        ax_f.set_ylim(-0.02, 1.02)
        ax_u.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_overlay(curves: dict, path, ylabel: str = "fidelity", title: str = "") -> Path:
    """``curves`` maps a label to ``(x, mean, std)``; std may be None."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, (label, (x, mean, std)) in enumerate(curves.items()):
            color = COLORS[i % len(COLORS)]
            ax.plot(x, mean, color=color, label=label)
            if std is not None:
                ax.fill_between(x, np.asarray(mean) - std, np.asarray(mean) + std, color=color, alpha=0.2, lw=0)
        ax.set_xlabel("episode")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def emit_plots(logs, out_dir, labels=None) -> list[Path]:
    """One run: learning curves and pulse sequence (two files).

    Several runs: a single overlay of their greedy-evaluation fidelity.
    Raises ``ValueError`` before writing anything if a run has no
    evaluation rows.
    """
    logs = list(logs)
    if not logs:
        raise ValueError("no run logs to plot")
    for lg in logs:
        if not lg.eval_rows:
            raise ValueError(f"run {lg.label} has no evaluation rows to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(logs) == 1:
        lg = logs[0]
        paths = [plot_learning(lg, out / "learning.svg")]
        if lg.best_trace is not None and len(lg.best_trace):
            paths.append(plot_pulses(lg.best_trace, out / "pulses.svg", f"best greedy episode, {lg.label}"))
        return paths
    labels = labels or [lg.label for lg in logs]
    curves = {
        lab: ([r.episode for r in lg.eval_rows], [r.mean_eval_fidelity for r in lg.eval_rows], None)
        for lab, lg in zip(labels, logs)
    }
    return [plot_overlay(curves, out / "overlay.svg", title="greedy evaluation fidelity")]
