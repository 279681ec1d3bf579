"""Gaussian-beam matrix optics and waveguide mode-match optimization.

Beams are tracked with the complex parameter q = z + i z_R (mm); thin
lenses carry per-wavelength focal lengths so chromatic focal shift can be
modeled from catalog data. The optimizer varies the two fiber-side
distances of every wavelength plus the shared distance between the common
coupling lens and the waveguide facet, maximizing the weighted sum of mode
overlaps with a bounded Nelder-Mead simplex from multiple starts.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from scipy.optimize import Bounds, minimize

MM_PER_UM = 1e-3
MM_PER_NM = 1e-6


@dataclass(frozen=True)
class GaussianBeam:
    wavelength_nm: float
    q_mm: complex

    def __post_init__(self):
        if self.wavelength_nm <= 0:
            raise ValueError("wavelength must be positive")
        if self.q_mm.imag <= 0:
            raise ValueError("beam parameter must have positive imaginary part")

    @classmethod
    def from_waist(cls, waist_um: float, wavelength_nm: float,
                   z_mm: float = 0.0) -> "GaussianBeam":
        """Beam a distance z_mm past a waist of radius waist_um."""
        if waist_um <= 0:
            raise ValueError("waist must be positive")
        zr = math.pi * (waist_um * MM_PER_UM) ** 2 / (wavelength_nm * MM_PER_NM)
        return cls(wavelength_nm=wavelength_nm, q_mm=complex(z_mm, zr))

    @property
    def rayleigh_range_mm(self) -> float:
        return self.q_mm.imag

    @property
    def waist_um(self) -> float:
        lam = self.wavelength_nm * MM_PER_NM
        return math.sqrt(lam * self.q_mm.imag / math.pi) / MM_PER_UM

    @property
    def spot_radius_um(self) -> float:
        """1/e^2 field radius at the current plane."""
        lam = self.wavelength_nm * MM_PER_NM
        inv_q = 1.0 / self.q_mm
        return math.sqrt(-lam / (math.pi * inv_q.imag)) / MM_PER_UM

    @property
    def inverse_curvature_per_mm(self) -> float:
        return (1.0 / self.q_mm).real


@dataclass(frozen=True)
class FreeSpace:
    distance_mm: float

    def __post_init__(self):
        if self.distance_mm < 0:
            raise ValueError("propagation distance must be >= 0")

    def matrix(self, wavelength_nm: float) -> np.ndarray:
        return np.array([[1.0, self.distance_mm], [0.0, 1.0]])


@dataclass(frozen=True)
class ThinLens:
    """Thin lens; focal_mm may be a mapping wavelength_nm -> focal length."""

    focal_mm: float | Mapping

    def focal_for(self, wavelength_nm: float) -> float:
        if isinstance(self.focal_mm, Mapping):
            try:
                f = self.focal_mm[wavelength_nm]
            except KeyError:
                raise ValueError(f"lens has no focal length at {wavelength_nm} nm")
        else:
            f = self.focal_mm
        if f == 0:
            raise ValueError("focal length must be nonzero")
        return f

    def matrix(self, wavelength_nm: float) -> np.ndarray:
        return np.array([[1.0, 0.0], [-1.0 / self.focal_for(wavelength_nm), 1.0]])


def train_matrix(train, wavelength_nm: float) -> np.ndarray:
    m = np.eye(2)
    for element in train:
        m = element.matrix(wavelength_nm) @ m
    return m


def propagate(beam: GaussianBeam, train) -> GaussianBeam:
    """Apply a train of elements: q' = (A q + B) / (C q + D)."""
    m = train_matrix(train, beam.wavelength_nm)
    denom = m[1, 0] * beam.q_mm + m[1, 1]
    if abs(denom) < 1e-12:
        raise ArithmeticError("beam parameter diverged (focal point singularity)")
    q = (m[0, 0] * beam.q_mm + m[0, 1]) / denom
    if q.imag <= 0:
        raise ArithmeticError(f"propagation produced non-physical q = {q}")
    return GaussianBeam(wavelength_nm=beam.wavelength_nm, q_mm=q)


@dataclass(frozen=True)
class ModeTarget:
    """Fundamental waveguide mode: a flat-phase Gaussian waist at the facet."""

    waist_um: float

    def __post_init__(self):
        if self.waist_um <= 0:
            raise ValueError("target waist must be positive")

    def beam(self, wavelength_nm: float) -> GaussianBeam:
        return GaussianBeam.from_waist(self.waist_um, wavelength_nm)


def mode_overlap(beam: GaussianBeam, other) -> float:
    """Power overlap of two co-axial fundamental Gaussian modes at one plane.

    Equals 1 exactly when spot sizes match and the relative wavefront
    curvature vanishes; symmetric in its arguments.
    """
    if isinstance(other, ModeTarget):
        other = other.beam(beam.wavelength_nm)
    if other.wavelength_nm != beam.wavelength_nm:
        raise ValueError("mode overlap requires equal wavelengths")
    lam = beam.wavelength_nm * MM_PER_NM
    k = 2.0 * math.pi / lam
    w1sq = (beam.spot_radius_um * MM_PER_UM) ** 2
    w2sq = (other.spot_radius_um * MM_PER_UM) ** 2
    dcurv = other.inverse_curvature_per_mm - beam.inverse_curvature_per_mm
    norm2 = (1.0 / w1sq + 1.0 / w2sq) ** 2 + (0.5 * k * dcurv) ** 2
    return 4.0 / (w1sq * w2sq * norm2)


@dataclass(frozen=True)
class CouplingProblem:
    """One wavelength's path: fiber output, its collimation lens, the shared
    waveguide coupling lens, and the target facet mode."""

    input_beam: GaussianBeam
    fiber_lens: ThinLens
    wg_lens: ThinLens
    target: ModeTarget

    def overlap(self, d1_mm: float, d2_mm: float, d3_mm: float) -> float:
        train = (FreeSpace(d1_mm), self.fiber_lens, FreeSpace(d2_mm),
                 self.wg_lens, FreeSpace(d3_mm))
        try:
            out = propagate(self.input_beam, train)
        except ArithmeticError:
            return 0.0
        return mode_overlap(out, self.target)


@dataclass(frozen=True)
class CouplingSolution:
    d1_mm: tuple
    d2_mm: tuple
    d3_mm: float
    efficiencies: tuple
    objective: float


def optimize_distances(problems, weights, bounds, n_starts: int = 8,
                       seed: int = 0) -> CouplingSolution:
    """Maximize the weighted mode-overlap sum over (d1_i, d2_i, shared d3).

    bounds maps 'd1', 'd2', 'd3' to (low, high) mm ranges. Multi-start
    bounded Nelder-Mead; the returned point is at least as good as every
    start point and stays inside the bounds.
    """
    problems = list(problems)
    weights = np.asarray(weights, dtype=float)
    if len(problems) != weights.size:
        raise ValueError("need one weight per wavelength problem")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    for key in ("d1", "d2", "d3"):
        lo, hi = bounds[key]
        if not lo < hi:
            raise ValueError(f"bounds for {key} are empty")

    n = len(problems)
    lo = np.array([bounds["d1"][0], bounds["d2"][0]] * n + [bounds["d3"][0]])
    hi = np.array([bounds["d1"][1], bounds["d2"][1]] * n + [bounds["d3"][1]])

    def split(x):
        return x[0:2 * n:2], x[1:2 * n:2], x[2 * n]

    def objective(x):
        d1, d2, d3 = split(x)
        return -sum(w * p.overlap(a, b, d3)
                    for w, p, a, b in zip(weights, problems, d1, d2))

    rng = np.random.default_rng(seed)
    # stratified starts: each coordinate sweeps its range across the starts
    fractions = (rng.permuted(np.tile(np.arange(n_starts), (lo.size, 1)), axis=1).T
                 + rng.random((n_starts, lo.size))) / n_starts
    starts = lo + fractions * (hi - lo)

    best_x, best_f = None, math.inf
    for x0 in starts:
        res = minimize(objective, x0, method="Nelder-Mead",
                       bounds=Bounds(lo, hi),
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000,
                                "maxfev": 6000})
        f_res = objective(res.x)
        if f_res < best_f:
            best_x, best_f = np.clip(res.x, lo, hi), f_res
        f_seed = objective(x0)
        if f_seed < best_f:
            best_x, best_f = x0, f_seed

    d1, d2, d3 = split(best_x)
    effs = tuple(p.overlap(a, b, d3) for p, a, b in zip(problems, d1, d2))
    return CouplingSolution(d1_mm=tuple(d1), d2_mm=tuple(d2), d3_mm=float(d3),
                            efficiencies=effs, objective=-best_f)


def numeric_overlap(beam: GaussianBeam, other, half_width_factor: float = 6.0,
                    n_grid: int = 1201) -> float:
    """2-D grid-integration oracle for mode_overlap (slow, test use)."""
    if isinstance(other, ModeTarget):
        other = other.beam(beam.wavelength_nm)
    lam = beam.wavelength_nm * MM_PER_NM
    k = 2.0 * math.pi / lam

    def field(b, x, y):
        w = b.spot_radius_um * MM_PER_UM
        inv_r = b.inverse_curvature_per_mm
        r2 = x ** 2 + y ** 2
        return np.exp(-r2 / w ** 2 - 0.5j * k * inv_r * r2)

    w_max = max(beam.spot_radius_um, other.spot_radius_um) * MM_PER_UM
    half = half_width_factor * w_max
    xs = np.linspace(-half, half, n_grid)
    x, y = np.meshgrid(xs, xs, sparse=True)
    e1 = field(beam, x, y)
    e2 = field(other, x, y)
    cross = np.trapezoid(np.trapezoid(np.conj(e1) * e2, xs, axis=1), xs)
    n1 = np.trapezoid(np.trapezoid(np.abs(e1) ** 2, xs, axis=1), xs)
    n2 = np.trapezoid(np.trapezoid(np.abs(e2) ** 2, xs, axis=1), xs)
    return float(abs(cross) ** 2 / (n1 * n2))
