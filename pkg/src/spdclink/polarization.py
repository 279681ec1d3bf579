"""Exact linear algebra for polarization qubits.

States are plain complex numpy arrays: kets as 1-D vectors, density
matrices and unitaries as 2-D. Everything here is pure and allocation-only,
safe to call from any number of threads.

Basis conventions (fixed project-wide):
    H = (1, 0)          V = (0, 1)
    D = (H + V)/sqrt2   A = (H - V)/sqrt2
    R = (H + iV)/sqrt2  L = (H - iV)/sqrt2
Two-qubit kets are ordered (HH, HV, VH, VV) = kron(arm A, arm B).
"""

from __future__ import annotations

import json
import math

import numpy as np

BASIS_LABELS = ("H", "V", "D", "A", "R", "L")

_SQ2 = 1.0 / math.sqrt(2.0)

_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_SQ2, _SQ2], dtype=complex),
    "A": np.array([_SQ2, -_SQ2], dtype=complex),
    "R": np.array([_SQ2, 1j * _SQ2], dtype=complex),
    "L": np.array([_SQ2, -1j * _SQ2], dtype=complex),
}

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-10
EIGENVALUE_TOL = 1e-9
UNITARITY_TOL = 1e-10


def ket(label: str) -> np.ndarray:
    """Single-qubit basis ket for one of the six labels H,V,D,A,R,L."""
    try:
        return _KETS[label].copy()
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}, expected one of {BASIS_LABELS}")


def pair_ket(label_a: str, label_b: str) -> np.ndarray:
    """Product ket |a>|b> as a 4-vector over (HH, HV, VH, VV)."""
    return np.kron(ket(label_a), ket(label_b))


def bell_state(phi: float, c1: float = 1.0, c2: float = 1.0) -> np.ndarray:
    """Entangled pair state (c1|HV> - c2 e^{i phi}|VH>) / sqrt(c1^2 + c2^2).

    phi is the state phase in radians; c1, c2 are the non-negative weights of
    the two pump directions. Equal weights give the maximally entangled state.
    """
    if c1 < 0 or c2 < 0:
        raise ValueError("weights must be non-negative")
    norm = math.hypot(c1, c2)
    if norm == 0.0:
        raise ValueError("at least one weight must be positive")
    psi = np.zeros(4, dtype=complex)
    psi[1] = c1 / norm
    psi[2] = -c2 * np.exp(1j * phi) / norm
    return psi


def density(psi: np.ndarray) -> np.ndarray:
    """Projector |psi><psi| of a (not necessarily normalized) ket."""
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj()) / np.vdot(psi, psi).real


def projector1(label: str) -> np.ndarray:
    """Rank-1 single-qubit projector onto one basis label."""
    v = ket(label)
    return np.outer(v, v.conj())


def projector(basis_a: str, basis_b: str) -> np.ndarray:
    """Two-qubit projector |a><a| (x) |b><b| for one projection setting."""
    return np.kron(projector1(basis_a), projector1(basis_b))


def fidelity(rho: np.ndarray, psi: np.ndarray) -> float:
    """Overlap <psi| rho |psi> of a density matrix with a pure target state."""
    rho = np.asarray(rho, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if rho.shape != (psi.size, psi.size):
        raise ValueError(f"dimension mismatch: rho {rho.shape}, psi {psi.shape}")
    val = np.vdot(psi, rho @ psi)
    if abs(val.imag) > 1e-9:
        raise ValueError(f"fidelity has non-negligible imaginary part {val.imag:.3e}")
    return float(val.real)


def purity(rho: np.ndarray) -> float:
    """Tr(rho^2); 1 for pure states, 1/dim for the maximally mixed state."""
    rho = np.asarray(rho, dtype=complex)
    return float(np.einsum("ij,ji->", rho, rho).real)


def expectation(rho: np.ndarray, op: np.ndarray) -> float:
    """Real part of Tr(op @ rho)."""
    return float(np.einsum("ij,ji->", op, rho).real)


def apply_local(rho: np.ndarray, u_a: np.ndarray, u_b: np.ndarray) -> np.ndarray:
    """Conjugate a two-qubit density matrix by a local unitary pair."""
    u = np.kron(np.asarray(u_a, dtype=complex), np.asarray(u_b, dtype=complex))
    return u @ rho @ u.conj().T


def partial_trace(rho: np.ndarray, keep: int) -> np.ndarray:
    """Single-qubit marginal of a two-qubit state; keep=0 for arm A, 1 for arm B."""
    r = np.asarray(rho, dtype=complex).reshape(2, 2, 2, 2)
    if keep == 0:
        return np.einsum("ikjk->ij", r)
    if keep == 1:
        return np.einsum("kikj->ij", r)
    raise ValueError("keep must be 0 or 1")


def is_hermitian(m: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T)) <= tol)


def validate_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> np.ndarray:
    """Return u as a complex array, raising if u @ u^dag deviates from identity."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"unitary must be square, got shape {u.shape}")
    dev = np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0])))
    if dev > tol:
        raise ValueError(f"matrix is not unitary (deviation {dev:.3e})")
    return u


def validate_density_matrix(rho: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Check Hermiticity, trace and positivity of a density matrix.

    Negative eigenvalues above -EIGENVALUE_TOL (floating-point noise) are
    clamped to zero and the matrix renormalized when clamp is set; anything
    more negative raises.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or rho.shape[0] not in (2, 4):
        raise ValueError(f"density matrix must be 2x2 or 4x4, got shape {rho.shape}")
    if not is_hermitian(rho):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density matrix trace {tr} is not 1")
    w = np.linalg.eigvalsh(rho)
    if w.min() < -EIGENVALUE_TOL:
        raise ValueError(f"density matrix has eigenvalue {w.min():.3e} < -{EIGENVALUE_TOL}")
    if clamp and w.min() < 0.0:
        w2, v = np.linalg.eigh(rho)
        w2 = np.clip(w2, 0.0, None)
        rho = (v * w2) @ v.conj().T
        rho = rho / np.trace(rho).real
    return rho


def fix_global_phase(u: np.ndarray) -> np.ndarray:
    """Gauge-fix a unitary so its largest first-column entry is real non-negative.

    Falls back to the (1,0) entry when the (0,0) entry is numerically zero.
    """
    u = np.asarray(u, dtype=complex)
    pivot = u[0, 0] if abs(u[0, 0]) > 1e-12 else u[1, 0]
    if abs(pivot) < 1e-15:
        return u.copy()
    return u * (pivot.conj() / abs(pivot))


def rho_to_json(rho: np.ndarray) -> str:
    """Serialize a density matrix to the {dim, re, im} JSON object."""
    rho = np.asarray(rho, dtype=complex)
    obj = {
        "dim": int(rho.shape[0]),
        "re": np.round(rho.real, 15).tolist(),
        "im": np.round(rho.imag, 15).tolist(),
    }
    return json.dumps(obj)


def rho_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    rho = np.array(obj["re"], dtype=float) + 1j * np.array(obj["im"], dtype=float)
    if rho.shape != (obj["dim"], obj["dim"]):
        raise ValueError("dim field inconsistent with matrix shape")
    return rho
