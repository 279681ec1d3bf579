"""State and process estimation from projection counts.

Two-qubit (and single-qubit) density matrices are reconstructed with an
iterative maximum-likelihood fixed-point scheme that is positive by
construction; a linear-inversion solve provides the starting point and a
cross-check. Single-qubit process tomography reconstructs the chi matrix in
the Pauli basis (sigma_0..sigma_3) from the six canonical input states.
Polarization-rotation calibration recovers the static unitary of an arm
from the measured outputs of H and R inputs.

Counts may be integers (sampled) or floats (expected values in exact mode);
the estimators do not care.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from . import polarization as pol

PROBABILITY_FLOOR = 1e-12
SINGLE_QUBIT_SETTINGS = pol.BASIS_LABELS


class CalibrationError(RuntimeError):
    """Raised when calibration inputs are too mixed to define a rotation."""


# ---------------------------------------------------------------------------
# counts tables

@dataclass(frozen=True)
class CountsTable:
    """Projection settings with in-window coincidence counts.

    settings entries are (basis_A, basis_B) pairs for two-qubit tables or
    single labels for single-qubit tables. background optionally carries the
    same-width background-window counts used for background correction.
    """

    settings: tuple
    counts: tuple
    background: tuple | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if len(self.settings) != len(self.counts):
            raise ValueError("settings and counts must have equal length")
        if self.background is not None and len(self.background) != len(self.counts):
            raise ValueError("background must match counts length")
        if any(c < 0 for c in self.counts):
            raise ValueError("counts must be non-negative")

    @property
    def dim(self) -> int:
        return 2 if isinstance(self.settings[0], str) else 4

    def counts_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)

    def background_corrected(self) -> "CountsTable":
        if self.background is None:
            raise ValueError("table carries no background column")
        corrected = tuple(max(c - b, 0.0) for c, b in zip(self.counts, self.background))
        return CountsTable(settings=self.settings, counts=corrected,
                           duration_s=self.duration_s)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.dim == 4:
                header = ["basis_A", "basis_B", "counts"]
            else:
                header = ["basis", "counts"]
            if self.background is not None:
                header.append("background")
            w.writerow(header)
            for i, s in enumerate(self.settings):
                row = list(s) if self.dim == 4 else [s]
                row.append(repr(float(self.counts[i])))
                if self.background is not None:
                    row.append(repr(float(self.background[i])))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "CountsTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        two_qubit = header[:2] == ["basis_A", "basis_B"]
        has_bg = header[-1] == "background"
        settings, counts, background = [], [], []
        for row in body:
            if two_qubit:
                settings.append((row[0], row[1]))
                vals = row[2:]
            else:
                settings.append(row[0])
                vals = row[1:]
            counts.append(float(vals[0]))
            if has_bg:
                background.append(float(vals[1]))
        return cls(settings=tuple(settings), counts=tuple(counts),
                   background=tuple(background) if has_bg else None)


def setting_projectors(settings, m_a: np.ndarray | None = None,
                       m_b: np.ndarray | None = None) -> np.ndarray:
    """Stack of projectors for the given settings, in the calibrated frame.

    A calibration matrix M is the forward rotation of the arm
    (lambda_out = M lambda_in); projecting onto the rotated basis states
    M|b> replaces each projector |b><b| by M |b><b| M^dag, which undoes the
    arm rotation in the reconstructed state.
    """
    if isinstance(settings[0], str):
        return np.stack([_rotated_projector(s, m_a) for s in settings])
    return np.stack([
        np.kron(_rotated_projector(a, m_a), _rotated_projector(b, m_b))
        for a, b in settings
    ])


def _rotated_projector(label: str, m: np.ndarray | None) -> np.ndarray:
    p = pol.projector1(label)
    if m is None:
        return p
    m = pol.validate_unitary(m)
    return m @ p @ m.conj().T


def rotate_bases(settings, m_a: np.ndarray, m_b: np.ndarray) -> np.ndarray:
    """Effective two-qubit projector list after per-arm calibration rotations."""
    return setting_projectors(settings, m_a=m_a, m_b=m_b)


# ---------------------------------------------------------------------------
# linear inversion

def _hermitian_basis(dim: int) -> np.ndarray:
    """Orthonormal (trace inner product) basis of dim x dim Hermitian matrices."""
    basis = []
    for i in range(dim):
        m = np.zeros((dim, dim), dtype=complex)
        m[i, i] = 1.0
        basis.append(m)
    for i in range(dim):
        for j in range(i + 1, dim):
            m = np.zeros((dim, dim), dtype=complex)
            m[i, j] = m[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(m)
            m = np.zeros((dim, dim), dtype=complex)
            m[i, j] = -1j / math.sqrt(2.0)
            m[j, i] = 1j / math.sqrt(2.0)
            basis.append(m)
    return np.stack(basis)


def linear_inversion(projectors: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Least-squares state estimate; Hermitian and unit trace, possibly not PSD."""
    dim = projectors.shape[1]
    basis = _hermitian_basis(dim)
    design = np.einsum("nij,kji->nk", projectors, basis).real
    x, *_ = np.linalg.lstsq(design, np.asarray(counts, dtype=float), rcond=None)
    rho = np.einsum("k,kij->ij", x, basis)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise ValueError("degenerate counts: zero-trace linear inversion")
    return rho / tr


def nearest_physical_state(rho: np.ndarray) -> np.ndarray:
    """Closest density matrix: project the spectrum onto the probability simplex."""
    rho = 0.5 * (rho + rho.conj().T)
    w, v = np.linalg.eigh(rho)
    w_proj = _project_simplex(w)
    return (v * w_proj) @ v.conj().T


def _project_simplex(w: np.ndarray) -> np.ndarray:
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(w) + 1)
    cond = u - (css - 1.0) / k > 0
    rho_idx = np.nonzero(cond)[0][-1]
    theta = (css[rho_idx] - 1.0) / (rho_idx + 1.0)
    return np.clip(w - theta, 0.0, None)


# ---------------------------------------------------------------------------
# maximum likelihood

@dataclass
class MLEResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool
    likelihood_trace: list = field(default_factory=list)


def _log_likelihood(counts: np.ndarray, probs: np.ndarray) -> float:
    # multinomial form: the per-setting flux is profiled out
    total = counts.sum()
    return float(np.dot(counts, np.log(probs)) - total * math.log(probs.sum()))


def mle_reconstruct(table: CountsTable, max_iter: int = 100_000, tol: float = 1e-10,
                    projectors: np.ndarray | None = None,
                    m_a: np.ndarray | None = None, m_b: np.ndarray | None = None,
                    init: str | np.ndarray = "linear",
                    track_likelihood: bool = False) -> MLEResult:
    """Iterative maximum-likelihood state reconstruction.

    Fixed-point update rho <- N[G^-1 R rho R G^-1] with
    R = sum_j (n_j / p_j) Pi_j and G = sum_j Pi_j; the G factors make the
    true state a fixed point for measurement sets that are not a resolution
    of identity (they cancel when G is proportional to identity, recovering
    the plain R rho R step). Model probabilities are floored at 1e-12; if a
    full step would lower the likelihood the step is damped toward the
    current state until it does not, so the likelihood is non-decreasing.

    init: "linear" (physicality-projected linear inversion), "mixed"
    (maximally mixed), or an explicit density matrix.
    """
    counts = table.counts_array()
    if counts.sum() <= 0:
        raise ValueError("counts table is all zero")
    if projectors is None:
        projectors = setting_projectors(table.settings, m_a=m_a, m_b=m_b)
    dim = projectors.shape[1]

    g = projectors.sum(axis=0)
    g_inv = np.linalg.inv(g)

    if isinstance(init, str):
        if init == "mixed":
            rho = np.eye(dim, dtype=complex) / dim
        elif init == "linear":
            rho = nearest_physical_state(linear_inversion(projectors, counts))
            if np.linalg.eigvalsh(rho).min() < 1e-12:
                # rank-deficient starts cannot grow rank under A rho A^dag
                rho = (1.0 - 1e-9) * rho + 1e-9 * np.eye(dim) / dim
        else:
            raise ValueError(f"unknown init {init!r}")
    else:
        rho = pol.validate_density_matrix(init)

    def probs(r):
        return np.maximum(np.einsum("nij,ji->n", projectors, r).real, PROBABILITY_FLOOR)

    p = probs(rho)
    ll = _log_likelihood(counts, p)
    trace_ll = [ll] if track_likelihood else []
    converged = False
    it = 0

    for it in range(1, max_iter + 1):
        r_op = np.einsum("n,nij->ij", counts / p, projectors)
        a_op = g_inv @ r_op
        cand = a_op @ rho @ a_op.conj().T
        cand = cand / np.trace(cand).real
        cand = 0.5 * (cand + cand.conj().T)

        ll_cand = _log_likelihood(counts, probs(cand))
        if ll_cand < ll - 1e-12 * max(1.0, abs(ll)):
            beta, improved = 0.5, False
            while beta > 1e-9:
                mixed = (1.0 - beta) * rho + beta * cand
                mixed = mixed / np.trace(mixed).real
                ll_mix = _log_likelihood(counts, probs(mixed))
                if ll_mix >= ll:
                    cand, ll_cand, improved = mixed, ll_mix, True
                    break
                beta *= 0.5
            if not improved:
                converged = True
                break

        step = float(np.max(np.abs(cand - rho)))
        rho = cand
        p = probs(rho)
        ll = ll_cand
        if track_likelihood:
            trace_ll.append(ll)
        if step < tol:
            converged = True
            break

    return MLEResult(rho=rho, log_likelihood=ll, iterations=it,
                     converged=converged, likelihood_trace=trace_ll)


def fidelity_and_purity(result: MLEResult, target: np.ndarray):
    """(fidelity to target pure state, purity) of a reconstruction."""
    return pol.fidelity(result.rho, target), pol.purity(result.rho)


@dataclass(frozen=True)
class ErrorEstimate:
    fidelity_mean: float
    fidelity_sigma: float
    purity_mean: float
    purity_sigma: float
    n_resamples: int

    def __post_init__(self):
        if self.n_resamples < 100:
            raise ValueError("need at least 100 Monte-Carlo resamples")

    def rows(self):
        return [("fidelity", self.fidelity_mean, self.fidelity_sigma),
                ("purity", self.purity_mean, self.purity_sigma)]


def monte_carlo_errors(table: CountsTable, n: int, seed: int, target: np.ndarray,
                       projectors: np.ndarray | None = None,
                       m_a: np.ndarray | None = None,
                       m_b: np.ndarray | None = None) -> ErrorEstimate:
    """Error bars from re-running the MLE on Poisson-resampled counts."""
    if n < 100:
        raise ValueError("need at least 100 resamples")
    if projectors is None:
        projectors = setting_projectors(table.settings, m_a=m_a, m_b=m_b)
    rng = np.random.default_rng(seed)
    counts = table.counts_array()
    fids = np.empty(n)
    purs = np.empty(n)
    for i in range(n):
        resampled = rng.poisson(counts).astype(float)
        if resampled.sum() == 0:
            resampled = counts
        res = mle_reconstruct(
            CountsTable(settings=table.settings, counts=tuple(resampled)),
            projectors=projectors, max_iter=2000, tol=1e-9)
        f, p = fidelity_and_purity(res, target)
        if not -1e-9 <= f <= 1.0 + 1e-9:
            raise RuntimeError(f"resampled fidelity {f} escaped [0, 1]")
        fids[i] = min(max(f, 0.0), 1.0)
        purs[i] = p
    return ErrorEstimate(
        fidelity_mean=float(fids.mean()), fidelity_sigma=float(fids.std(ddof=1)),
        purity_mean=float(purs.mean()), purity_sigma=float(purs.std(ddof=1)),
        n_resamples=n)


# ---------------------------------------------------------------------------
# process tomography

@dataclass(frozen=True)
class ProcessMatrix:
    """Single-qubit chi matrix in the Pauli basis (identity, X, Y, Z)."""

    chi: np.ndarray

    def __post_init__(self):
        chi = np.asarray(self.chi, dtype=complex)
        if chi.shape != (4, 4):
            raise ValueError("chi must be 4x4")
        if np.max(np.abs(chi - chi.conj().T)) > 1e-9:
            raise ValueError("chi must be Hermitian")
        if np.linalg.eigvalsh(chi).min() < -1e-9:
            raise ValueError("chi must be positive semidefinite")
        tp = _tp_operator(chi)
        if np.max(np.abs(tp - np.eye(2))) > 1e-8:
            raise ValueError("chi violates trace preservation")

    @property
    def process_fidelity_to_identity(self) -> float:
        return float(self.chi[0, 0].real)

    def to_json(self) -> str:
        return pol.rho_to_json(self.chi)


def _tp_operator(chi: np.ndarray) -> np.ndarray:
    out = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            out += chi[m, n] * (pol.PAULI[n].conj().T @ pol.PAULI[m])
    return out


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Channel action sum_mn chi_mn sigma_m rho sigma_n^dag."""
    out = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            out += chi[m, n] * (pol.PAULI[m] @ rho @ pol.PAULI[n].conj().T)
    return out


def chi_of_unitary(u: np.ndarray) -> np.ndarray:
    """Rank-1 chi matrix of a unitary map."""
    vec = _pauli_vector(u)
    return np.outer(vec, vec.conj())


def _pauli_vector(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    vec = np.array([np.trace(s.conj().T @ u) / 2.0 for s in pol.PAULI])
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        raise ValueError("operator has no Pauli expansion")
    return vec / norm


def process_tomography(io_pairs, max_iter: int = 100_000, tol: float = 1e-10) -> ProcessMatrix:
    """Reconstruct the chi matrix from (input label, output counts) pairs.

    Each of the six canonical inputs must appear. Output states come from
    single-qubit MLE; chi is solved by least squares over the Pauli basis
    and then projected onto the positive trace-preserving set (alternating
    Dykstra projections).
    """
    provided = {label for label, _ in io_pairs}
    missing = set(SINGLE_QUBIT_SETTINGS) - provided
    if missing:
        raise ValueError(f"process tomography needs all six inputs, missing {sorted(missing)}")

    rho_ins, rho_outs = [], []
    for label, table in io_pairs:
        rho_ins.append(pol.projector1(label))
        rho_outs.append(mle_reconstruct(table, max_iter=max_iter, tol=tol).rho)

    basis = _hermitian_basis(4)
    # design: entry (k, t) holds the channel output of input k under basis op t
    rows, rhs = [], []
    for rho_in, rho_out in zip(rho_ins, rho_outs):
        images = np.stack([apply_chi(b, rho_in) for b in basis])
        for i in range(2):
            for j in range(2):
                rows.append(images[:, i, j])
                rhs.append(rho_out[i, j])
    design = np.stack(rows)
    rhs = np.asarray(rhs)
    design_ri = np.vstack([design.real, design.imag])
    rhs_ri = np.concatenate([rhs.real, rhs.imag])
    y, *_ = np.linalg.lstsq(design_ri, rhs_ri, rcond=None)
    chi = np.einsum("k,kij->ij", y, basis)
    chi = _project_cptp(chi)
    return ProcessMatrix(chi=chi)


def _tp_constraint_matrix(basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, rhs = [], []
    imgs = np.stack([_tp_operator(b) for b in basis])
    idx = [(0, 0), (1, 1), (0, 1)]
    for i, j in idx:
        rows.append(imgs[:, i, j].real)
        rhs.append(1.0 if i == j else 0.0)
        if i != j:
            rows.append(imgs[:, i, j].imag)
            rhs.append(0.0)
    return np.stack(rows), np.asarray(rhs)


def _project_cptp(chi: np.ndarray, max_rounds: int = 300) -> np.ndarray:
    """Dykstra alternating projections onto the PSD cone and the TP affine set."""
    basis = _hermitian_basis(4)
    a_tp, b_tp = _tp_constraint_matrix(basis)
    a_pinv = np.linalg.pinv(a_tp)

    def to_vec(m):
        return np.einsum("kij,ji->k", basis, m).real

    def from_vec(v):
        return np.einsum("k,kij->ij", v, basis)

    def proj_tp(m):
        v = to_vec(m)
        return from_vec(v - a_pinv @ (a_tp @ v - b_tp))

    def proj_psd(m):
        m = 0.5 * (m + m.conj().T)
        w, vv = np.linalg.eigh(m)
        return (vv * np.clip(w, 0.0, None)) @ vv.conj().T

    x = 0.5 * (chi + chi.conj().T)
    p_corr = np.zeros_like(x)
    q_corr = np.zeros_like(x)
    for _ in range(max_rounds):
        y = proj_psd(x + p_corr)
        p_corr = x + p_corr - y
        x_new = proj_tp(y + q_corr)
        q_corr = y + q_corr - x_new
        if (np.max(np.abs(x_new - x)) < 1e-13
                and np.linalg.eigvalsh(x_new).min() > -1e-12):
            x = x_new
            break
        x = x_new
    # final tidy: snap inside both tolerance bands
    x = proj_tp(proj_psd(x))
    w = np.linalg.eigvalsh(x)
    if w.min() < -1e-10:
        x = proj_psd(x)
    return x


def process_fidelity(chi, target_unitary: np.ndarray) -> float:
    """Overlap of a chi matrix with a target unitary's chi representation.

    Invariant under a global phase of the target.
    """
    if isinstance(chi, ProcessMatrix):
        chi = chi.chi
    vec = _pauli_vector(pol.validate_unitary(target_unitary))
    val = np.vdot(vec, np.asarray(chi, dtype=complex) @ vec)
    return float(val.real)


# ---------------------------------------------------------------------------
# polarization calibration

def _principal_state(rho: np.ndarray, what: str) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    w, v = np.linalg.eigh(rho)
    if w[-1] - w[-2] < 0.1:
        raise CalibrationError(
            f"{what} output too mixed to define a principal axis (gap {w[-1] - w[-2]:.3f})")
    p = pol.purity(rho)
    if p < 0.9:
        warnings.warn(f"{what} calibration output purity {p:.3f} < 0.9", stacklevel=3)
    return v[:, -1]


def calibrate_rotation(measured_h_out: np.ndarray, measured_r_out: np.ndarray) -> np.ndarray:
    """Rotation matrix M of an arm from the measured outputs of H and R inputs.

    M jointly minimizes the infidelity of M|H> and M|R> against the principal
    eigenvectors of the two measured states; the result is gauge-fixed to a
    real non-negative leading entry. Raises CalibrationError when an output
    has no usable principal axis.
    """
    h_out = _principal_state(measured_h_out, "H")
    r_out = _principal_state(measured_r_out, "R")

    # construction: first column maps H exactly; phase of the orthogonal
    # complement chosen so R lands on its target
    c1 = h_out
    resid = math.sqrt(2.0) * r_out - c1
    c2 = -1j * resid
    c2 = c2 - c1 * np.vdot(c1, c2)
    n2 = np.linalg.norm(c2)
    if n2 < 1e-9:
        c2 = np.array([-np.conj(c1[1]), np.conj(c1[0])])
    else:
        c2 = c2 / n2
    m0 = np.column_stack([c1, c2])
    # orthonormality can drift if the two estimates disagree; re-polar-decompose
    u_svd, _, vt_svd = np.linalg.svd(m0)
    m0 = u_svd @ vt_svd

    ket_h, ket_r = pol.ket("H"), pol.ket("R")

    def cost(x):
        h_gen = x[0] * pol.PAULI[1] + x[1] * pol.PAULI[2] + x[2] * pol.PAULI[3]
        m = m0 @ expm(0.5j * h_gen)
        return (2.0 - abs(np.vdot(h_out, m @ ket_h)) ** 2
                - abs(np.vdot(r_out, m @ ket_r)) ** 2)

    res = minimize(cost, x0=np.zeros(3), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    h_gen = res.x[0] * pol.PAULI[1] + res.x[1] * pol.PAULI[2] + res.x[2] * pol.PAULI[3]
    m = m0 @ expm(0.5j * h_gen)
    return pol.fix_global_phase(m)


def calibrate_rotation_states(input_kets, measured_outputs) -> np.ndarray:
    """Overdetermined n-state variant of calibrate_rotation.

    Maximizes the summed overlap of M|in_k> with the principal eigenvector of
    each measured output; useful when more than the two canonical calibration
    states are prepared.
    """
    if len(input_kets) < 2:
        raise ValueError("need at least two calibration states")
    outs = [_principal_state(r, f"state {k}") for k, r in enumerate(measured_outputs)]
    m0 = calibrate_rotation(measured_outputs[0], measured_outputs[1]) \
        if len(input_kets) == 2 else np.eye(2, dtype=complex)

    def cost(x):
        h_gen = x[0] * pol.PAULI[1] + x[1] * pol.PAULI[2] + x[2] * pol.PAULI[3]
        m = m0 @ expm(0.5j * h_gen)
        return len(outs) - sum(abs(np.vdot(o, m @ np.asarray(k, dtype=complex))) ** 2
                               for o, k in zip(outs, input_kets))

    res = minimize(cost, x0=np.zeros(3), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 6000})
    h_gen = res.x[0] * pol.PAULI[1] + res.x[1] * pol.PAULI[2] + res.x[2] * pol.PAULI[3]
    return pol.fix_global_phase(m0 @ expm(0.5j * h_gen))


def unitary_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    """Phase-invariant overlap |Tr(U^dag V)| / dim of two unitaries."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    return float(abs(np.trace(u.conj().T @ v)) / u.shape[0])
