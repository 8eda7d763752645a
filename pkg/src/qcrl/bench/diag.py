from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn
from ..qenv import ReachabilityReport, reachability_diagnostic
from .tasks import TaskSpec


@dataclass
class DiagReport:
    task: str
    reachability: ReachabilityReport
    gradcheck: dict

    @property
    def warnings(self) -> list[str]:
        return list(self.reachability.warnings)

    def format(self) -> str:
        r = self.reachability
        lines = [f"task: {self.task}", f"hilbert dimension: {r.dim}"]
        if r.lie_dim is None:
            lines.append("dynamical Lie algebra: not computed (dimension above 16)")
        else:
            tag = "full su(%d)" % r.dim if r.full_control else "restricted"
            lines.append(f"dynamical Lie algebra: dim {r.lie_dim} of {r.su_dim} ({tag})")
        lines.append("conserved: " + (", ".join(r.conserved) if r.conserved else "none found"))
        if r.max_fidelity_bound is not None:
            lines.append(f"reachable fidelity bound: {r.max_fidelity_bound:.6f}")
        status = {True: "reachable", False: "UNREACHABLE", None: "undetermined"}[r.reachable]
        lines.append(f"target: {status}")
        for w in r.warnings:
            lines.append(f"WARNING: {w}")
        g = self.gradcheck
        verdict = "pass" if g["passed"] else "FAIL"
        lines.append(f"gradient check: {verdict} ({g['checks']} checks, max rel error {g['max_rel_error']:.2e}, tol 1e-05)")
        return "\n".join(lines)


def diag(task: TaskSpec, n_checks: int = 50, seed: int = 0) -> DiagReport:
    """Reachability findings for ``task`` plus a finite-difference gradient check."""
    cfg = task.env_config()
    reach = reachability_diagnostic(task.build_model(), cfg.initial, cfg.target)
    grad = nn.gradient_check(np.random.default_rng(seed), n_checks=n_checks)
    return DiagReport(task.name, reach, grad)
