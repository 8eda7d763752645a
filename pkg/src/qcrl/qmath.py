"""Dense complex linear algebra for closed-system state-vector dynamics.

States are 1-D ``complex128`` arrays and operators are square 2-D arrays.
Everything here is a pure function of its arguments; the only mutable object
is the optional :class:`DriftCounter` a caller may hand to :func:`apply`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-9
NORM_TOL = 1e-9
EIGH_MAX_DIM = 256

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


class QuantumError(Exception):
    pass


class NonHermitianInput(QuantumError, ValueError):
    pass


class DimensionMismatch(QuantumError, ValueError):
    pass


@dataclass
class DriftCounter:
    """Counts corrective renormalizations performed by :func:`apply`.

    ``max_drift`` is the largest norm deviation seen on any step, corrected
    or not.
    """

    count: int = 0
    max_drift: float = 0.0


def kron(a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.size == 0 or b.size == 0:
        raise ValueError("kron operands must be non-empty")
    return np.kron(a, b)


def kron_all(*ops):
    out = np.ones((1, 1), dtype=complex)
    for op in ops:
        out = np.kron(out, op)
    return out


def basis_state(index: int, dim: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def is_hermitian(h, tol: float = HERMITIAN_TOL) -> bool:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        return False
    return bool(np.max(np.abs(h - h.conj().T), initial=0.0) <= tol)


def propagator(h, dt: float) -> np.ndarray:
    """Return ``exp(-i h dt)`` for a Hermitian ``h``.

    Uses a Hermitian eigendecomposition up to dimension 256 and scipy's
    scaling-and-squaring ``expm`` above that.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"Hamiltonian must be square, got shape {h.shape}")
    if not is_hermitian(h):
        raise NonHermitianInput("Hamiltonian is not Hermitian within %g" % HERMITIAN_TOL)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if h.shape[0] <= EIGH_MAX_DIM:
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * w * dt)) @ v.conj().T
    return scipy.linalg.expm(-1j * dt * h)


def unitarity_error(u) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


def apply(u, psi, counter: DriftCounter | None = None) -> np.ndarray:
    """Matrix-vector product ``u @ psi``.

    The result is renormalized only when its norm has drifted by more than
    ``NORM_TOL``; each such correction is logged and counted.
    """
    u = np.asarray(u)
    psi = np.asarray(psi)
    if u.ndim != 2 or u.shape[0] != u.shape[1] or u.shape[1] != psi.shape[0]:
        raise DimensionMismatch(f"operator {u.shape} incompatible with state {psi.shape}")
    out = u @ psi
    norm = np.linalg.norm(out)
    drift = abs(norm - 1.0)
    if counter is not None:
        counter.max_drift = max(counter.max_drift, drift)
    if drift > NORM_TOL:
        log.warning("state norm drifted by %.3e; renormalizing", drift)
        if counter is not None:
            counter.count += 1
        out = out / norm
    return out


def inner(a, b) -> complex:
    """``<a|b>``, conjugate-linear in ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"state shapes differ: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def commutator(a, b) -> np.ndarray:
    return a @ b - b @ a
