"""Analytic model of the cavity-enhanced SPDC pair source.

Covers the photon wavepacket shape, expected coincidence signal/background
counts in a symmetric window, signal-to-background ratio, the fidelity
ceiling imposed by accidental background, the Vernier cluster spectrum of
the birefringent cavity, and the interferometer-phase to state-phase map.

All functions are pure; SourceParams is an immutable record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

DEFAULT_LOCK_DEAD_ZONE_RAD = math.radians(10.0)


@dataclass(frozen=True)
class SourceParams:
    """Operating parameters of the pair source.

    Rates are per second, times in ns, frequencies in GHz unless suffixed
    otherwise. out_eff_a/out_eff_b are the fiber-coupled, spectrally filtered
    availability of photons at the two output ports.
    """

    pair_rate_per_mw: float = 4.7e4
    pump_power_mw: float = 20.0
    tau_h_ns: float = 15.78
    tau_v_ns: float = 12.94
    fsr_h_ghz: float = 1.85
    fsr_v_ghz: float = 1.83
    hv_mode_offset_mhz: float = 480.0
    crystal_bandwidth_ghz: float = 200.0
    phase_rad: float = math.radians(270.0)
    c1: float = 1.0
    c2: float = 1.0
    out_eff_a: float = 0.31
    out_eff_b: float = 0.214

    def __post_init__(self):
        for name in ("pair_rate_per_mw", "pump_power_mw", "tau_h_ns", "tau_v_ns",
                     "fsr_h_ghz", "fsr_v_ghz", "crystal_bandwidth_ghz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("out_eff_a", "out_eff_b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.c1 < 0 or self.c2 < 0 or self.c1 + self.c2 == 0:
            raise ValueError("weights c1, c2 must be non-negative with c1 + c2 > 0")

    @property
    def tau_mean_ns(self) -> float:
        return 0.5 * (self.tau_h_ns + self.tau_v_ns)

    @property
    def pair_rate(self) -> float:
        """Generated pair rate in 1/s at the configured pump power."""
        return self.pair_rate_per_mw * self.pump_power_mw

    def at_power(self, pump_power_mw: float) -> "SourceParams":
        return replace(self, pump_power_mw=pump_power_mw)


@dataclass(frozen=True)
class ClusterSpectrum:
    """Doubly resonant mode comb: frequency offsets (GHz) and relative weights."""

    frequencies_ghz: tuple
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("cluster weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("cluster weights must sum to 1")

    def central_weight(self) -> float:
        i = int(np.argmin(np.abs(np.asarray(self.frequencies_ghz))))
        return float(self.weights[i])

    def to_csv(self, path) -> None:
        rows = ["frequency_GHz,weight"]
        rows += [f"{f:.9g},{w:.12g}" for f, w in zip(self.frequencies_ghz, self.weights)]
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


def wavepacket_coincidence_pdf(delay_ns, params: SourceParams):
    """Normalized pair-delay density (1/ns), H-photon-late convention.

    Positive delay means the H photon arrives after the V photon; the decay
    constant on the positive side is tau_h. Vectorized over delay_ns.
    """
    delay = np.asarray(delay_ns, dtype=float)
    norm = 1.0 / (params.tau_h_ns + params.tau_v_ns)
    out = norm * np.where(
        delay >= 0.0,
        np.exp(-delay / params.tau_h_ns),
        np.exp(delay / params.tau_v_ns),
    )
    if np.isscalar(delay_ns):
        return float(out)
    return out


def wavepacket_capture(window_ns: float, params: SourceParams) -> float:
    """Exact probability that |delay| <= window/2 under the two-sided wavepacket."""
    if window_ns <= 0:
        return 0.0
    half = 0.5 * window_ns
    th, tv = params.tau_h_ns, params.tau_v_ns
    return (th * (1.0 - math.exp(-half / th)) + tv * (1.0 - math.exp(-half / tv))) / (th + tv)


def _mean_tau_capture(window_ns: float, params: SourceParams) -> float:
    return 1.0 - math.exp(-window_ns / (2.0 * params.tau_mean_ns))


def analytic_signal(window_ns: float, duration_s: float, eta1: float, eta2: float,
                    params: SourceParams) -> float:
    """Expected true-pair coincidences in a symmetric window of width window_ns.

    eta1 * eta2 * R_pair * (1 - exp(-window / 2 tau_mean)) * T; the capture
    factor uses the mean wavepacket width.
    """
    if window_ns <= 0 or duration_s <= 0:
        raise ValueError("window and duration must be positive")
    return eta1 * eta2 * params.pair_rate * _mean_tau_capture(window_ns, params) * duration_s


def analytic_background(window_ns: float, duration_s: float, eta1: float, eta2: float,
                        params: SourceParams) -> float:
    """Expected accidental coincidences: eta1 * eta2 * R_pair^2 * window * T."""
    if window_ns <= 0 or duration_s <= 0:
        raise ValueError("window and duration must be positive")
    return eta1 * eta2 * params.pair_rate ** 2 * (window_ns * 1e-9) * duration_s


def analytic_sbr(window_ns: float, params: SourceParams) -> float:
    """Signal-to-background ratio; independent of efficiencies and duration."""
    if window_ns <= 0:
        raise ValueError("window must be positive")
    return _mean_tau_capture(window_ns, params) / (params.pair_rate * window_ns * 1e-9)


def fidelity_ceiling(sbr: float, f_wo_bg: float = 1.0) -> float:
    """Best reachable Bell-state fidelity given an unpolarized accidental floor.

    (1/4 + f_wo_bg * SBR) / (1 + SBR), where f_wo_bg is the fidelity with the
    background subtracted.
    """
    if sbr < 0:
        raise ValueError("sbr must be non-negative")
    if math.isinf(sbr):
        return f_wo_bg
    return (0.25 + f_wo_bg * sbr) / (1.0 + sbr)


def _cluster_weights(n_orders: np.ndarray, linewidth_mhz: float, params: SourceParams) -> np.ndarray:
    fsr_mean = 0.5 * (params.fsr_h_ghz + params.fsr_v_ghz)
    freqs = n_orders * fsr_mean
    # phase-matching envelope, first null at the crystal acceptance bandwidth
    envelope = np.sinc(freqs / params.crystal_bandwidth_ghz) ** 2
    # Vernier walk-off of the two polarization combs, in MHz per order
    mismatch_mhz = n_orders * (params.fsr_h_ghz - params.fsr_v_ghz) * 1e3
    overlap = 1.0 / (1.0 + (2.0 * mismatch_mhz / linewidth_mhz) ** 2)
    return envelope * overlap


def fit_cluster_linewidth(params: SourceParams, n_modes: int = 5,
                          central_weight: float = 0.60) -> float:
    """Solve for the mode-overlap Lorentzian FWHM (MHz) that puts the given
    fraction of total weight in the central mode."""
    if n_modes % 2 == 0 or n_modes < 1:
        raise ValueError("n_modes must be odd and >= 1")
    orders = np.arange(n_modes) - n_modes // 2

    def frac(lw):
        w = _cluster_weights(orders, lw, params)
        return w[n_modes // 2] / w.sum() - central_weight

    return brentq(frac, 1e-3, 1e6)


def cluster_spectrum(params: SourceParams, n_modes: int,
                     linewidth_mhz: float | None = None) -> ClusterSpectrum:
    """Relative weights of the doubly resonant mode pairs around the locked mode.

    Weights combine the crystal phase-matching envelope with the Lorentzian
    overlap of the H and V resonance combs; the locked central pair has zero
    Vernier mismatch by construction. linewidth_mhz defaults to the value
    fitted so the central of five modes carries 60% of the weight.
    """
    if n_modes % 2 == 0 or n_modes < 1:
        raise ValueError("n_modes must be odd and >= 1")
    if linewidth_mhz is None:
        linewidth_mhz = fit_cluster_linewidth(params)
    orders = np.arange(n_modes) - n_modes // 2
    fsr_mean = 0.5 * (params.fsr_h_ghz + params.fsr_v_ghz)
    weights = _cluster_weights(orders, linewidth_mhz, params)
    weights = weights / weights.sum()
    return ClusterSpectrum(
        frequencies_ghz=tuple(orders * fsr_mean),
        weights=tuple(weights),
    )


def state_phase_from_interferometer(interferometer_phase_rad: float, offset_rad: float,
                                    dead_zone_half_width_rad: float = DEFAULT_LOCK_DEAD_ZONE_RAD):
    """Map the pump interferometer phase to the pair-state phase.

    Returns (state_phase mod 2pi, lockable). The interferometer cannot be
    stabilized near the fringe turning points (multiples of pi), so lockable
    is False within the dead zone around them.
    """
    two_pi = 2.0 * math.pi
    phase = (interferometer_phase_rad + offset_rad) % two_pi
    dist_to_turning = abs(math.remainder(interferometer_phase_rad, math.pi))
    lockable = dist_to_turning > dead_zone_half_width_rad
    return phase, lockable
