"""Quantum state-preparation environments.

A :class:`ControlModel` holds the drift and control Hamiltonians of a
piecewise-constant control problem; an :class:`EnvConfig` fixes the slice
duration, horizon, success threshold and the initial/target states.  The
functional :func:`reset` / :func:`step` pair does the physics and the
bookkeeping; :class:`QuantumEnv` wraps them with the familiar stateful API.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qmath
from .qmath import I2, SX, SY, SZ, DimensionMismatch, DriftCounter

MAX_CHAIN = 10
LIE_MAX_DIM = 16


class DimensionTooLarge(ValueError):
    pass


@dataclass
class ControlModel:
    drift: np.ndarray
    controls: list
    amp_low: np.ndarray
    amp_high: np.ndarray
    num_qubits: int
    name: str = ""
    # set when the matrices live in the single-excitation sector of a chain
    subspace: bool = False

    def __post_init__(self):
        self.drift = np.asarray(self.drift, dtype=complex)
        self.controls = [np.asarray(c, dtype=complex) for c in self.controls]
        self.amp_low = np.asarray(self.amp_low, dtype=float).reshape(-1)
        self.amp_high = np.asarray(self.amp_high, dtype=float).reshape(-1)
        d = self.drift.shape[0]
        expected = self.num_qubits if self.subspace else 2**self.num_qubits
        for m in [self.drift, *self.controls]:
            if m.shape != (d, d):
                raise DimensionMismatch("all model matrices must share one square shape")
            if not qmath.is_hermitian(m):
                raise qmath.NonHermitianInput(f"{self.name}: model matrix is not Hermitian")
        if d != expected:
            raise DimensionMismatch(f"matrix dim {d} does not match {self.num_qubits} qubits")
        if len(self.amp_low) != len(self.controls) or len(self.amp_high) != len(self.controls):
            raise ValueError("one amplitude bound per control channel is required")

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def clamp(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != self.n_controls:
            raise DimensionMismatch(f"expected {self.n_controls} action components, got {a.shape[0]}")
        return np.clip(a, self.amp_low, self.amp_high)

    def hamiltonian(self, action) -> np.ndarray:
        h = self.drift.copy()
        for a, hk in zip(action, self.controls):
            if a != 0.0:
                h += a * hk
        return h


@dataclass
class EnvConfig:
    dt: float
    n_max: int
    f0: float
    initial: np.ndarray
    target: np.ndarray
    subspace_mode: bool = False

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=complex)
        self.target = np.asarray(self.target, dtype=complex)
        if self.initial.shape != self.target.shape:
            raise DimensionMismatch("initial and target states differ in dimension")
        for name, psi in (("initial", self.initial), ("target", self.target)):
            if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
                raise ValueError(f"{name} state is not normalized")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 0.0 < self.f0 <= 1.0:
            raise ValueError("f0 must lie in (0, 1]")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class StepOutcome:
    next_state: np.ndarray
    encoded: np.ndarray
    reward: float
    fidelity: float
    done: bool
    step_index: int
    action: np.ndarray | None = None


# -- model builders ---------------------------------------------------------


def build_one_qubit(h_gap: float = 1.0) -> ControlModel:
    """Singlet-triplet qubit ``H(u) = 4 u sz + h sx``."""
    if not math.isfinite(h_gap):
        raise ValueError("h_gap must be finite")
    return ControlModel(
        drift=h_gap * SX,
        controls=[4.0 * SZ],
        amp_low=[-1.0],
        amp_high=[1.0],
        num_qubits=1,
        name="one_qubit",
    )


def build_two_qubit() -> ControlModel:
    return ControlModel(
        drift=np.kron(SX, SX) + np.kron(SY, SY),
        controls=[np.kron(SZ, I2), np.kron(I2, SZ)],
        amp_low=[-1.0, -1.0],
        amp_high=[1.0, 1.0],
        num_qubits=2,
        name="two_qubit",
    )


def build_two_qubit_amended() -> ControlModel:
    """Two-qubit model plus local ``sx`` channels.

    The literal model conserves total ``sz``, which leaves |00> frozen; the
    extra channels break that symmetry so the benchmark targets become
    reachable.
    """
    base = build_two_qubit()
    return ControlModel(
        drift=base.drift,
        controls=base.controls + [np.kron(SX, I2), np.kron(I2, SX)],
        amp_low=[-1.0] * 4,
        amp_high=[1.0] * 4,
        num_qubits=2,
        name="two_qubit_amended",
    )


def _site_op(op, site: int, k: int) -> np.ndarray:
    return qmath.kron_all(*[op if j == site else I2 for j in range(k)])


def build_spin_chain(k: int, coupling: float = 1.0, subspace: bool = False) -> ControlModel:
    """XX spin chain with one local ``sz`` field per site, ``S = sigma / 2``.

    With ``subspace=True`` the matrices are restricted to the ``k``-dimensional
    single-excitation sector, basis ordered by the excited site.
    """
    if k > MAX_CHAIN:
        raise DimensionTooLarge(f"chains above {MAX_CHAIN} spins are not supported")
    if k < 2:
        raise ValueError("a chain needs at least two spins")
    bounds = ([-1.0] * k, [1.0] * k)
    if subspace:
        drift = np.zeros((k, k), dtype=complex)
        for j in range(k - 1):
            drift[j, j + 1] = drift[j + 1, j] = coupling / 2.0
        controls = []
        for j in range(k):
            diag = np.ones(k)
            diag[j] = -1.0
            controls.append(np.diag(diag).astype(complex))
        return ControlModel(drift, controls, *bounds, num_qubits=k, name=f"spin_chain_{k}_sub", subspace=True)

    sx, sy, sz = SX / 2, SY / 2, SZ / 2
    d = 2**k
    drift = np.zeros((d, d), dtype=complex)
    for j in range(k - 1):
        for s in (sx, sy):
            ops = [I2] * k
            ops[j] = s
            ops[j + 1] = s
            drift += qmath.kron_all(*ops)
    drift *= coupling
    controls = [2.0 * _site_op(sz, j, k) for j in range(k)]
    return ControlModel(drift, controls, *bounds, num_qubits=k, name=f"spin_chain_{k}")


def single_excitation_indices(k: int) -> np.ndarray:
    """Computational-basis indices of |10..0>, |010..0>, ..., |0..01>."""
    return np.array([1 << (k - 1 - j) for j in range(k)])


def embed_single_excitation(psi_sub, k: int) -> np.ndarray:
    out = np.zeros(2**k, dtype=complex)
    out[single_excitation_indices(k)] = psi_sub
    return out


# -- per-step physics ---------------------------------------------------------


def fidelity(psi, target) -> float:
    f = abs(qmath.inner(target, psi)) ** 2
    return float(min(max(f, 0.0), 1.0))


def guided_reward(f_t: float, e_prev: float, f0: float, t: int = 0, n_max: int = 0) -> float:
    """Two-phase shaped reward with a potential term on ``e = 1 - F``.

    ``t`` and ``n_max`` are accepted for interface completeness; the timeout
    clause never changes which branch applies.
    """
    e_t = 1.0 - f_t
    shaping = 1000.0 * (e_prev - e_t)
    if f_t >= f0:
        return 10000.0 + shaping
    return f_t * 100.0 + shaping


def encode_state(psi) -> np.ndarray:
    psi = np.asarray(psi)
    return np.concatenate([psi.real, psi.imag]).astype(float)


def reset(cfg: EnvConfig) -> StepOutcome:
    psi = cfg.initial.copy()
    return StepOutcome(
        next_state=psi,
        encoded=encode_state(psi),
        reward=0.0,
        fidelity=fidelity(psi, cfg.target),
        done=False,
        step_index=0,
    )


def step(model: ControlModel, cfg: EnvConfig, psi, action, e_prev: float, t: int,
         counter: DriftCounter | None = None) -> StepOutcome:
    """Advance ``psi`` by one slice under the clamped ``action``.

    ``t`` is the index of the step being taken, counting from 1.
    """
    a = model.clamp(action)
    if psi.shape[0] != model.dim:
        raise DimensionMismatch(f"state dim {psi.shape[0]} vs model dim {model.dim}")
    u = qmath.propagator(model.hamiltonian(a), cfg.dt)
    nxt = qmath.apply(u, psi, counter)
    f = fidelity(nxt, cfg.target)
    r = guided_reward(f, e_prev, cfg.f0, t, cfg.n_max)
    return StepOutcome(
        next_state=nxt,
        encoded=encode_state(nxt),
        reward=r,
        fidelity=f,
        done=bool(f >= cfg.f0 or t >= cfg.n_max),
        step_index=t,
        action=a,
    )


def bloch_coordinates(psi) -> tuple[float, float, float]:
    psi = np.asarray(psi)
    if psi.shape != (2,):
        raise DimensionMismatch("Bloch coordinates need a single-qubit state")
    a, b = psi
    x = 2.0 * (a.conjugate() * b).real
    y = 2.0 * (a.conjugate() * b).imag
    z = abs(a) ** 2 - abs(b) ** 2
    return float(x), float(y), float(z)


class QuantumEnv:
    """Stateful wrapper: ``reset()`` then ``step(action)`` until ``done``."""

    def __init__(self, model: ControlModel, cfg: EnvConfig):
        if cfg.initial.shape[0] != model.dim:
            raise DimensionMismatch("task states do not match the model dimension")
        self.model = model
        self.cfg = cfg
        self.drift = DriftCounter()
        self.psi = cfg.initial.copy()
        self.t = 0
        self.e_prev = 1.0 - fidelity(self.psi, cfg.target)

    @property
    def obs_dim(self) -> int:
        return 2 * self.model.dim

    @property
    def act_dim(self) -> int:
        return self.model.n_controls

    def reset(self) -> StepOutcome:
        out = reset(self.cfg)
        self.psi = out.next_state
        self.t = 0
        self.e_prev = 1.0 - out.fidelity
        return out

    def step(self, action) -> StepOutcome:
        out = step(self.model, self.cfg, self.psi, action, self.e_prev, self.t + 1, self.drift)
        self.psi = out.next_state
        self.t = out.step_index
        self.e_prev = 1.0 - out.fidelity
        return out


# -- episode traces -----------------------------------------------------------


@dataclass
class EpisodeTrace:
    actions: list = field(default_factory=list)
    fidelities: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def start(self, outcome: StepOutcome):
        self.fidelities.append(outcome.fidelity)
        self.states.append(outcome.next_state)

    def record(self, action, outcome: StepOutcome):
        self.actions.append(np.asarray(action, dtype=float))
        self.fidelities.append(outcome.fidelity)
        self.rewards.append(outcome.reward)
        self.states.append(outcome.next_state)

    def __len__(self):
        return len(self.actions)


def trace_rows(trace: EpisodeTrace, n_controls: int, with_bloch: bool) -> tuple[list, list]:
    """Header and rows for the per-step trace CSV; row 0 is the initial state."""
    header = ["step"] + [f"action_{j + 1}" for j in range(n_controls)] + ["fidelity", "reward"]
    if with_bloch:
        header += ["bloch_x", "bloch_y", "bloch_z"]
    rows = []
    for i, f in enumerate(trace.fidelities):
        if i == 0:
            acts = [""] * n_controls
            r = 0.0
        else:
            acts = [repr(float(x)) for x in trace.actions[i - 1]]
            r = trace.rewards[i - 1]
        row = [i, *acts, repr(float(f)), repr(float(r))]
        if with_bloch:
            row += [repr(c) for c in bloch_coordinates(trace.states[i])]
        rows.append(row)
    return header, rows


def write_trace_csv(path, trace: EpisodeTrace, model: ControlModel) -> Path:
    path = Path(path)
    header, rows = trace_rows(trace, model.n_controls, model.dim == 2 and not model.subspace)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


# -- reachability -------------------------------------------------------------


@dataclass
class ReachabilityReport:
    dim: int
    lie_dim: int | None
    su_dim: int
    conserved: list
    initial_sectors: dict | None = None
    target_sectors: dict | None = None
    max_fidelity_bound: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def full_control(self) -> bool:
        return self.lie_dim is not None and self.lie_dim >= self.su_dim

    @property
    def reachable(self) -> bool | None:
        if self.max_fidelity_bound is None:
            return None
        return self.max_fidelity_bound >= 1.0 - 1e-9


def lie_closure_dim(generators, tol: float = 1e-9, limit: int | None = None) -> int:
    """Real dimension of the Lie algebra generated by ``generators``."""
    d = generators[0].shape[0]
    limit = limit or 2 * d * d
    vecs = np.zeros((0, 2 * d * d))
    elems = []

    def add(m):
        nonlocal vecs
        nrm = np.linalg.norm(m)
        if nrm <= tol:
            return False
        m = m / nrm
        v = np.concatenate([m.real.ravel(), m.imag.ravel()])
        for _ in range(2):
            v = v - vecs.T @ (vecs @ v)
        if np.linalg.norm(v) <= tol:
            return False
        v /= np.linalg.norm(v)
        vecs = np.vstack([vecs, v])
        elems.append((v[: d * d] + 1j * v[d * d:]).reshape(d, d))
        return True

    for g in generators:
        add(g)
    frontier = list(elems)
    while frontier and len(elems) < limit:
        fresh = []
        for x in frontier:
            for y in list(elems):
                if add(qmath.commutator(x, y)):
                    fresh.append(elems[-1])
        frontier = fresh
    return len(elems)


def _total_sz_diag(num_qubits: int) -> np.ndarray:
    idx = np.arange(2**num_qubits)
    ones = np.zeros_like(idx)
    for j in range(num_qubits):
        ones += (idx >> j) & 1
    return num_qubits - 2 * ones


def _sector_populations(psi, zdiag) -> dict:
    pops = {}
    for z in np.unique(zdiag):
        p = float(np.sum(np.abs(psi[zdiag == z]) ** 2))
        if p > 1e-12:
            pops[int(z)] = p
    return pops


def reachability_diagnostic(model: ControlModel, initial=None, target=None) -> ReachabilityReport:
    """Lie-rank and conserved-quantity check for a control model.

    The Lie algebra of ``{iH0, iHk}`` is only closed for dimensions up to 16.
    When total ``sz`` commutes with every model matrix, the population of
    each ``sz`` sector is invariant, which bounds the reachable fidelity by
    ``(sum_m sqrt(p_m q_m))**2``.
    """
    d = model.dim
    gens = [1j * model.drift] + [1j * h for h in model.controls]
    lie_dim = lie_closure_dim(gens) if d <= LIE_MAX_DIM else None
    report = ReachabilityReport(dim=d, lie_dim=lie_dim, su_dim=d * d - 1, conserved=[])
    if model.subspace:
        report.conserved.append("excitation_number")
        if initial is not None and target is not None:
            report.max_fidelity_bound = 1.0
        return report

    zdiag = _total_sz_diag(model.num_qubits)
    ztot = np.diag(zdiag).astype(complex)
    if all(np.max(np.abs(qmath.commutator(h, ztot))) <= 1e-9 for h in [model.drift, *model.controls]):
        report.conserved.append("total_sigma_z")
        if model.num_qubits > 1:
            report.conserved.append("excitation_number")
        if initial is not None and target is not None:
            p = _sector_populations(np.asarray(initial), zdiag)
            q = _sector_populations(np.asarray(target), zdiag)
            report.initial_sectors, report.target_sectors = p, q
            bound = sum(math.sqrt(p[z] * q[z]) for z in p if z in q) ** 2
            report.max_fidelity_bound = min(bound, 1.0)
            if bound < 1.0 - 1e-9:
                report.warnings.append(
                    "target unreachable: conserved total σz sector mismatch "
                    f"(fidelity bound {bound:.4f})"
                )
    elif initial is not None and target is not None and report.full_control:
        report.max_fidelity_bound = 1.0
    return report


def basis_label_index(label: str) -> int:
    """``'10'`` -> 2; leftmost character is qubit 1 (most significant)."""
    return int(label, 2)
