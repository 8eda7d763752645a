"""Benchmark task registry.

Task names:

* ``oq_*``   one-qubit model, slice pi/20, 20 slices
* ``tq_*``   two-qubit model as published (``*_amended`` adds local sx channels),
  slice pi/40, 40 slices
* ``chain_K`` K-spin XX chain, |10..0> -> |0..01>, total time (K-1) pi/2 in 80 slices
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .. import qenv

DEFAULT_F0 = 0.99
CHAIN_SIZES = range(2, 9)


class UnknownTask(KeyError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    model: str
    initial: tuple
    target: tuple
    dt: float
    n_max: int
    f0: float = DEFAULT_F0
    chain_k: int = 0
    subspace_mode: bool = False
    episodes: int = 2000
    description: str = ""

    def build_model(self) -> qenv.ControlModel:
        if self.model == "one_qubit":
            return qenv.build_one_qubit(1.0)
        if self.model == "two_qubit":
            return qenv.build_two_qubit()
        if self.model == "two_qubit_amended":
            return qenv.build_two_qubit_amended()
        if self.model == "spin_chain":
            return qenv.build_spin_chain(self.chain_k, 1.0, subspace=self.subspace_mode)
        raise ValueError(f"unknown model selector {self.model!r}")

    def states(self) -> tuple[np.ndarray, np.ndarray]:
        psi0 = np.array(self.initial, dtype=complex)
        psif = np.array(self.target, dtype=complex)
        if self.model == "spin_chain" and not self.subspace_mode:
            psi0 = qenv.embed_single_excitation(psi0, self.chain_k)
            psif = qenv.embed_single_excitation(psif, self.chain_k)
        return psi0, psif

    def env_config(self) -> qenv.EnvConfig:
        psi0, psif = self.states()
        return qenv.EnvConfig(self.dt, self.n_max, self.f0, psi0, psif, self.subspace_mode)

    def make_env(self) -> qenv.QuantumEnv:
        return qenv.QuantumEnv(self.build_model(), self.env_config())

    @property
    def total_time(self) -> float:
        return self.dt * self.n_max

    def with_overrides(self, **kw) -> "TaskSpec":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "subspace_mode" in kw and kw["subspace_mode"] and self.model != "spin_chain":
            raise ValueError("subspace mode only applies to spin-chain tasks")
        return replace(self, **kw)


def _ket(label: str) -> tuple:
    v = np.zeros(2 ** len(label), dtype=complex)
    v[int(label, 2)] = 1.0
    return tuple(v)


_S = 1 / math.sqrt(2)
_PLUS_PHASED = (0.5 + 0.5j, 0.5 + 0.5j)
_BELL_PLUS = (_S, 0, 0, _S)
_BELL_PSI = (0, _S, _S, 0)


def _build_registry() -> dict:
    tasks = []
    oq = dict(model="one_qubit", dt=math.pi / 20, n_max=20)
    tasks += [
        TaskSpec("oq_10", initial=_ket("1"), target=_ket("0"), description="|1> -> |0>", **oq),
        TaskSpec("oq_01", initial=_ket("0"), target=_ket("1"), description="|0> -> |1>", **oq),
        TaskSpec("oq_sup1", initial=_ket("1"), target=_PLUS_PHASED,
                 description="|1> -> (1/2+i/2)(|0>+|1>)", **oq),
        TaskSpec("oq_sup0", initial=_ket("0"), target=_PLUS_PHASED,
                 description="|0> -> (1/2+i/2)(|0>+|1>)", **oq),
    ]
    two = [
        ("tq_0011", _ket("00"), _ket("11"), "|00> -> |11>"),
        ("tq_1100", _ket("11"), _ket("00"), "|11> -> |00>"),
        ("tq_bell_plus", _ket("00"), _BELL_PLUS, "|00> -> (|00>+|11>)/sqrt2"),
        ("tq_bell_psi", _ket("00"), _BELL_PSI, "|00> -> (|01>+|10>)/sqrt2"),
    ]
    for name, a, b, desc in two:
        tasks.append(TaskSpec(name, "two_qubit", a, b, math.pi / 40, 40, description=desc))
        tasks.append(TaskSpec(name + "_amended", "two_qubit_amended", a, b, math.pi / 40, 40,
                              description=desc + " (amended model)"))
    for k in CHAIN_SIZES:
        first = tuple(1.0 if j == 0 else 0.0 for j in range(k))
        last = tuple(1.0 if j == k - 1 else 0.0 for j in range(k))
        tasks.append(TaskSpec(
            f"chain_{k}", "spin_chain", first, last, (k - 1) * math.pi / 2 / 80, 80,
            chain_k=k, episodes=3000, description=f"{k}-spin transfer |10..0> -> |0..01>",
        ))
    return {t.name: t for t in tasks}


_REGISTRY = _build_registry()


def registry() -> list[TaskSpec]:
    return list(_REGISTRY.values())


def get_task(name: str) -> TaskSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownTask(f"unknown task {name!r}; run the 'tasks' command for the list") from None
