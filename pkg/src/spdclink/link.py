"""Composable channel model: converter, fibers, filters, splitters, detectors.

A channel chain is an ordered tuple of ChainElement values. Each element
carries a survival probability, a polarization map (unitary plus a
depolarizing weight) and an additive noise rate injected at the downstream
detector. Chains compose multiplicatively in survival and by operator
composition in polarization.

The four experiment builders (setups "a" through "d") assemble the chains
of the measured configurations: direct detection, frequency conversion,
conversion plus 20 km of fiber, and bi-directional conversion over 40 km
with a retroreflector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import polarization as pol
from . import source as src

# Polarization-indiscriminate coincidence rates (1/s) quoted for the four
# setups at 20 mW pump and a 1.5 tau_mean window. They bundle detection
# efficiencies that are not broken down further; the builders solve a lumped
# arm-A detector efficiency from them (see DetectorParams notes).
MEASURED_RATES_20MW = {"a": 4168.0, "b": 974.0, "c": 428.0, "d": 40.0}
RATE_CALIBRATION_POWER_MW = 20.0
RATE_CALIBRATION_WINDOW_TAU = 1.5

_IDENTITY2 = np.eye(2, dtype=complex)

# Achromatic half-wave plate inside the conversion loop: swaps H and V.
CONVERTER_ROTATION = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _rotation(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Static birefringence stand-in: Rz(alpha) Ry(beta) Rz(gamma)."""
    def rz(t):
        return np.array([[np.exp(-0.5j * t), 0], [0, np.exp(0.5j * t)]])

    def ry(t):
        c, s = math.cos(t / 2), math.sin(t / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)

    return rz(alpha) @ ry(beta) @ rz(gamma)


@dataclass(frozen=True)
class ChainElement:
    """One optical element of a channel chain."""

    name: str
    survival: float
    unitary: np.ndarray = field(default_factory=lambda: _IDENTITY2.copy())
    depol_weight: float = 1.0
    noise_rate: float = 0.0
    kind: str = "generic"

    def __post_init__(self):
        if not 0.0 <= self.survival <= 1.0:
            raise ValueError(f"element {self.name}: survival must be in [0, 1]")
        if not 0.0 <= self.depol_weight <= 1.0:
            raise ValueError(f"element {self.name}: depol_weight must be in [0, 1]")
        if self.noise_rate < 0.0:
            raise ValueError(f"element {self.name}: noise_rate must be >= 0")
        pol.validate_unitary(self.unitary)


@dataclass(frozen=True)
class PolarizationChannel:
    """Net polarization action of a chain: rho -> w U rho U^dag + (1-w) I/2."""

    unitary: np.ndarray
    depol_weight: float = 1.0

    def apply(self, rho: np.ndarray) -> np.ndarray:
        u = self.unitary
        out = u @ rho @ u.conj().T
        if self.depol_weight < 1.0:
            out = self.depol_weight * out + (1.0 - self.depol_weight) * 0.5 * np.trace(rho) * np.eye(2)
        return out

    @property
    def process_fidelity(self) -> float:
        """Process fidelity of the map against its own unitary part."""
        return self.depol_weight + (1.0 - self.depol_weight) * 0.25


def depol_weight_from_process_fidelity(f_process: float) -> float:
    """Invert f = w + (1-w)/4 for the depolarizing admixture weight."""
    if not 0.0 <= f_process <= 1.0:
        raise ValueError("process fidelity must be in [0, 1]")
    return max(0.0, (4.0 * f_process - 1.0) / 3.0)


# ---------------------------------------------------------------------------
# converter

@dataclass(frozen=True)
class ConverterParams:
    """Polarization-preserving frequency converter.

    The external efficiency follows eta_max * sin^2(sqrt(eta_nor P) L) per
    polarization arm; the curve is anchored by the measured peak efficiency
    and peak pump power of each arm, from which eta_nor_h/eta_nor_v derive
    (the two arms peak at different powers, so they cannot share eta_nor).
    Pump powers are the working points; the H arm is backed off to match the
    V arm's peak efficiency for polarization-independent operation.
    """

    eta_ext_max_h: float = 0.601
    eta_ext_max_v: float = 0.572
    peak_power_h_w: float = 0.660
    peak_power_v_w: float = 0.630
    waveguide_length_mm: float = 40.0
    pump_power_h_w: float = 0.485
    pump_power_v_w: float = 0.630
    process_fidelity: float = 0.99947
    process_unitary: np.ndarray = field(default_factory=lambda: CONVERTER_ROTATION.copy())
    noise_rate_at_calibration: float = 24.0
    calibration_pump_w: float = 1.1
    filter_stage_enabled: bool = True

    def __post_init__(self):
        for name in ("eta_ext_max_h", "eta_ext_max_v", "process_fidelity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        for name in ("peak_power_h_w", "peak_power_v_w", "waveguide_length_mm",
                     "calibration_pump_w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("pump_power_h_w", "pump_power_v_w", "noise_rate_at_calibration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        pol.validate_unitary(self.process_unitary)

    def eta_nor(self, arm: str) -> float:
        """Normalized power efficiency (1/(W mm^2)) of one arm."""
        peak = {"H": self.peak_power_h_w, "V": self.peak_power_v_w}[arm]
        return (0.5 * math.pi) ** 2 / (peak * self.waveguide_length_mm ** 2)

    @property
    def total_pump_w(self) -> float:
        return self.pump_power_h_w + self.pump_power_v_w

    @property
    def noise_coeff(self) -> float:
        """counts/(s W), solved so the noise rate at the calibration pump matches."""
        p = self.calibration_pump_w
        return self.noise_rate_at_calibration / (p * (1.0 - self._internal_efficiency(p)))

    def _internal_efficiency(self, total_pump_w: float) -> float:
        # mean of the per-arm eta_nor values; peak of this curve defines P_max
        mean_inv_peak = 0.5 * (1.0 / self.peak_power_h_w + 1.0 / self.peak_power_v_w)
        return math.sin(0.5 * math.pi * math.sqrt(total_pump_w * mean_inv_peak)) ** 2

    @property
    def noise_curve_peak_power_w(self) -> float:
        return 2.0 / (1.0 / self.peak_power_h_w + 1.0 / self.peak_power_v_w)


def conversion_efficiency(pump_w: float, params: ConverterParams, arm: str) -> float:
    """External device efficiency of one polarization arm at a pump power."""
    if pump_w < 0:
        raise ValueError("pump power must be >= 0")
    if arm not in ("H", "V"):
        raise ValueError("arm must be 'H' or 'V'")
    eta_max = params.eta_ext_max_h if arm == "H" else params.eta_ext_max_v
    peak = params.peak_power_h_w if arm == "H" else params.peak_power_v_w
    return eta_max * math.sin(0.5 * math.pi * math.sqrt(pump_w / peak)) ** 2


def converter_working_efficiency(params: ConverterParams) -> float:
    """Polarization-averaged device efficiency at the configured working point."""
    eh = conversion_efficiency(params.pump_power_h_w, params, "H")
    ev = conversion_efficiency(params.pump_power_v_w, params, "V")
    return 0.5 * (eh + ev)


def converter_noise_rate(total_pump_w: float, params: ConverterParams) -> float:
    """Pump-induced noise rate (1/s) entering the detection path.

    Linear generation times a (1 - internal efficiency) depletion factor:
    noise photons that are converted out of the detection band before leaving
    the waveguide are lost, which flattens the curve at high pump.
    """
    if total_pump_w < 0:
        raise ValueError("pump power must be >= 0")
    if total_pump_w == 0.0:
        return 0.0
    return params.noise_coeff * total_pump_w * (1.0 - params._internal_efficiency(total_pump_w))


# ---------------------------------------------------------------------------
# filters

FILTER_KINDS = ("FPI", "VBG", "BPF", "Etalon")


@dataclass(frozen=True)
class FilterParams:
    """Spectral filter; fsr only applies to the interferometric kinds."""

    kind: str
    fwhm_mhz: float
    fsr_ghz: float | None = None
    peak_transmission: float = 1.0
    coating_reflectivity: float | None = None

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.fwhm_mhz <= 0:
            raise ValueError("fwhm must be positive")
        if self.kind in ("FPI", "Etalon"):
            if self.fsr_ghz is None:
                raise ValueError(f"{self.kind} filter needs an FSR")
            if self.fwhm_mhz >= self.fsr_ghz * 1e3:
                raise ValueError("fwhm must be smaller than the FSR")
        if not 0.0 <= self.peak_transmission <= 1.0:
            raise ValueError("peak transmission must be in [0, 1]")

    @property
    def finesse(self) -> float:
        if self.fsr_ghz is None:
            raise ValueError(f"finesse undefined for {self.kind}")
        return self.fsr_ghz * 1e3 / self.fwhm_mhz


def finesse_from_reflectivity(r: float) -> float:
    """Finesse of a two-mirror cavity with equal coating reflectivity r."""
    if not 0.0 < r < 1.0:
        raise ValueError("reflectivity must be in (0, 1)")
    return math.pi * math.sqrt(r) / (1.0 - r)


def fpi_854() -> FilterParams:
    """Monolithic Fabry-Perot filter selecting a single source cavity mode."""
    return FilterParams(kind="FPI", fsr_ghz=50.0, fwhm_mhz=104.0,
                        coating_reflectivity=0.9935)


def converter_filter_stage() -> tuple[FilterParams, ...]:
    """Bandpass + volume Bragg grating + etalon used behind the converter."""
    return (
        FilterParams(kind="BPF", fwhm_mhz=1500e3),
        FilterParams(kind="VBG", fwhm_mhz=25e3),
        FilterParams(kind="Etalon", fsr_ghz=12.5, fwhm_mhz=250.0),
    )


def filter_transmission(detuning_mhz, params: FilterParams):
    """Transmission at a detuning from the filter center (vectorized).

    FPI/Etalon use the Airy function, VBG a Lorentzian, BPF a top-hat.
    """
    delta = np.asarray(detuning_mhz, dtype=float)
    if params.kind in ("FPI", "Etalon"):
        coef = (2.0 * params.finesse / math.pi) ** 2
        t = params.peak_transmission / (
            1.0 + coef * np.sin(math.pi * delta / (params.fsr_ghz * 1e3)) ** 2)
    elif params.kind == "VBG":
        t = params.peak_transmission / (1.0 + (2.0 * delta / params.fwhm_mhz) ** 2)
    else:  # BPF
        t = params.peak_transmission * (np.abs(delta) <= 0.5 * params.fwhm_mhz)
    if np.isscalar(detuning_mhz):
        return float(t)
    return t


def filtered_cluster(spectrum: src.ClusterSpectrum, params: FilterParams) -> src.ClusterSpectrum:
    """Cluster spectrum after a filter: mode weights times the transmission."""
    t = filter_transmission(np.asarray(spectrum.frequencies_ghz) * 1e3, params)
    w = np.asarray(spectrum.weights) * t
    return src.ClusterSpectrum(frequencies_ghz=spectrum.frequencies_ghz,
                               weights=tuple(w / w.sum()))


def equivalent_noise_bandwidth_mhz(params: FilterParams, span_ghz: float) -> float:
    """Broadband-noise bandwidth a filter passes within a spectral span."""
    if params.kind in ("FPI", "Etalon"):
        lines = max(1, round(span_ghz / params.fsr_ghz))
        return lines * 0.5 * math.pi * params.fwhm_mhz
    if params.kind == "VBG":
        return 0.5 * math.pi * params.fwhm_mhz
    return min(params.fwhm_mhz, span_ghz * 1e3)


# ---------------------------------------------------------------------------
# fibers and detectors

@dataclass(frozen=True)
class FiberParams:
    length_km: float
    attenuation_db_per_km: float
    rotation: np.ndarray = field(default_factory=lambda: _IDENTITY2.copy())

    def __post_init__(self):
        if self.length_km < 0 or self.attenuation_db_per_km < 0:
            raise ValueError("fiber length and attenuation must be >= 0")
        pol.validate_unitary(self.rotation)

    @property
    def loss_db(self) -> float:
        return self.attenuation_db_per_km * self.length_km


def fiber_survival(params: FiberParams) -> float:
    """Power transmission 10^(-attenuation * length / 10)."""
    return 10.0 ** (-params.loss_db / 10.0)


@dataclass(frozen=True)
class DetectorParams:
    """Lumped detection efficiency and dark rate of one arm's detector.

    efficiency bundles quantum efficiency with projection-optics and
    coupling losses that the measured rates do not break down.
    """

    efficiency: float
    dark_rate: float
    kind: str = "APD"

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("detector efficiency must be in [0, 1]")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be >= 0")
        if self.kind not in ("APD", "SNSPD"):
            raise ValueError("detector kind must be APD or SNSPD")


# ---------------------------------------------------------------------------
# chains

def chain_survival(chain) -> float:
    """End-to-end survival probability: product of element survivals."""
    p = 1.0
    for el in chain:
        p *= el.survival
    return p


def chain_noise_rate(chain) -> float:
    """Total noise rate (1/s) the chain injects at the downstream detector."""
    return sum(el.noise_rate for el in chain)


def chain_polarization_channel(chain) -> PolarizationChannel:
    """Compose element polarization maps in propagation order.

    Unitaries compose by matrix product; depolarizing weights multiply (a
    depolarizing admixture commutes with unitaries, so the composed map is
    again unitary-plus-depolarizing).
    """
    u = _IDENTITY2.copy()
    w = 1.0
    for el in chain:
        u = el.unitary @ u
        w *= el.depol_weight
    return PolarizationChannel(unitary=u, depol_weight=w)


def apply_pair_channels(rho: np.ndarray, chan_a: PolarizationChannel,
                        chan_b: PolarizationChannel) -> np.ndarray:
    """Apply per-arm polarization channels to a two-qubit state."""
    out = pol.apply_local(rho, chan_a.unitary, chan_b.unitary)
    if chan_a.depol_weight < 1.0:
        marg_b = pol.partial_trace(out, keep=1)
        out = chan_a.depol_weight * out + (1.0 - chan_a.depol_weight) * np.kron(0.5 * np.eye(2), marg_b)
    if chan_b.depol_weight < 1.0:
        marg_a = pol.partial_trace(out, keep=0)
        out = chan_b.depol_weight * out + (1.0 - chan_b.depol_weight) * np.kron(marg_a, 0.5 * np.eye(2))
    return out


def chain_report(chain) -> dict:
    """Per-element survivals with cumulative dB, as a JSON-ready dict."""
    rows = []
    cum = 1.0
    for el in chain:
        cum *= el.survival
        rows.append({
            "name": el.name,
            "kind": el.kind,
            "survival": el.survival,
            "cumulative_survival": cum,
            "cumulative_db": -10.0 * math.log10(cum) if cum > 0 else math.inf,
        })
    return {"elements": rows, "total_survival": cum}


def chain_report_json(chain) -> str:
    rep = chain_report(chain)
    for row in rep["elements"]:
        if math.isinf(row["cumulative_db"]):
            row["cumulative_db"] = None
    return json.dumps(rep, indent=2)


# ---------------------------------------------------------------------------
# experiment configurations

TOMOGRAPHY_SETTINGS_16 = tuple((a, b) for a in "HVDR" for b in "HVDR")
TOMOGRAPHY_SETTINGS_36 = tuple((a, b) for a in pol.BASIS_LABELS for b in pol.BASIS_LABELS)


@dataclass(frozen=True)
class ArmConfig:
    label: str
    chain: tuple
    detector: DetectorParams

    @property
    def path_survival(self) -> float:
        return chain_survival(self.chain)

    @property
    def noise_rate(self) -> float:
        return chain_noise_rate(self.chain)

    def polarization_channel(self) -> PolarizationChannel:
        return chain_polarization_channel(self.chain)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    source: src.SourceParams
    arm_a: ArmConfig
    arm_b: ArmConfig
    pump_powers_mw: tuple = (5.0, 10.0, 15.0, 20.0)
    window_tau_multiples: tuple = (1.5, 5.0)
    duration_s: float = 1.0
    seed: int = 1234
    calibration_interval_min: float | None = None
    settings: tuple = TOMOGRAPHY_SETTINGS_16
    mc_resamples: int = 120

    def __post_init__(self):
        if not self.pump_powers_mw or not self.window_tau_multiples:
            raise ValueError("need at least one pump power and one window")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")

    def arm(self, which: str) -> ArmConfig:
        return {"a": self.arm_a, "b": self.arm_b}[which]

    def arm_efficiency(self, which: str) -> float:
        """Port availability x path survival x detector efficiency."""
        arm = self.arm(which)
        out_eff = self.source.out_eff_a if which == "a" else self.source.out_eff_b
        return out_eff * arm.path_survival * arm.detector.efficiency

    def window_ns(self, tau_multiple: float) -> float:
        return tau_multiple * self.source.tau_mean_ns

    def at_power(self, pump_power_mw: float) -> "ExperimentConfig":
        return replace(self, source=self.source.at_power(pump_power_mw))


def predicted_coincidence_rate(config: ExperimentConfig, window_ns: float,
                               exact_capture: bool = False) -> float:
    """Polarization-indiscriminate pair coincidence rate (1/s) in a window."""
    capture = (src.wavepacket_capture(window_ns, config.source) if exact_capture
               else 1.0 - math.exp(-window_ns / (2.0 * config.source.tau_mean_ns)))
    return (config.source.pair_rate * config.arm_efficiency("a")
            * config.arm_efficiency("b") * capture)


def _converter_element(converter: ConverterParams, survival: float, name: str,
                       noise_rate: float) -> ChainElement:
    return ChainElement(
        name=name,
        survival=survival,
        unitary=converter.process_unitary,
        depol_weight=depol_weight_from_process_fidelity(converter.process_fidelity),
        noise_rate=noise_rate,
        kind="converter",
    )


def _solve_arm_a_detector(target_rate: float, source: src.SourceParams,
                          path_a: float, path_b: float, det_b: float) -> float:
    capture = 1.0 - math.exp(-RATE_CALIBRATION_WINDOW_TAU / 2.0)
    rate_per_eta = (source.pair_rate_per_mw * RATE_CALIBRATION_POWER_MW * capture
                    * source.out_eff_a * path_a * source.out_eff_b * path_b * det_b)
    eta = target_rate / rate_per_eta
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"rate calibration yields unphysical detector efficiency {eta:.4f}")
    return eta


def build_config(which: str, source: src.SourceParams | None = None,
                 converter: ConverterParams | None = None,
                 **overrides) -> ExperimentConfig:
    """Assemble one of the four measured experiment configurations.

    a: both arms detected at the source.
    b: arm A frequency-converted (filter stage in use) before detection.
    c: as b, plus 20 km of telecom fiber.
    d: 20 km fiber terminated by a retroreflector; the photon is
       back-converted on the return pass, extracted by a 50:50 fiber
       splitter and detected at the original wavelength behind the
       single-mode filter instead of the converter filter stage.

    Keyword overrides are forwarded to ExperimentConfig. The arm-A detector
    efficiency is solved so the analytic coincidence rate at 20 mW and a
    1.5 tau_mean window reproduces the measured rate of that configuration.
    """
    if which not in MEASURED_RATES_20MW:
        raise ValueError(f"unknown configuration {which!r}, expected one of a, b, c, d")
    source = source if source is not None else src.SourceParams()
    conv = converter if converter is not None else ConverterParams()

    link_854 = ChainElement(name="fiber to converter lab (854 nm)", survival=0.87,
                            unitary=_rotation(0.31, 0.74, -0.42), kind="fiber")
    telecom_20km = ChainElement(name="20 km telecom fiber", survival=0.42,
                                unitary=_rotation(1.12, 0.48, 0.23), kind="fiber")

    noise_1550 = converter_noise_rate(conv.total_pump_w, conv)
    eta_work = converter_working_efficiency(conv)

    if which == "a":
        chain_a: tuple = ()
    elif which == "b":
        chain_a = (
            link_854,
            _converter_element(conv, eta_work, "frequency converter", noise_1550),
        )
    elif which == "c":
        chain_a = (
            link_854,
            _converter_element(conv, eta_work, "frequency converter", noise_1550),
            telecom_20km,
        )
    else:
        # round trip per the measured loss budget; the converter filter stage
        # is bypassed, so conversion sits at its unfiltered 60% and the noise
        # reaching the detector scales by the single-mode-filter bandwidth
        # ratio relative to the calibrated stage value
        conv_d = replace(conv, filter_stage_enabled=False)
        # the stage is engineered for a single 250 MHz transmission window,
        # whereas the 854 nm cavity filter passes its whole comb within the
        # conversion acceptance; the noise scales by the bandwidth ratio
        stage_etalon = converter_filter_stage()[-1]
        passthrough = (equivalent_noise_bandwidth_mhz(fpi_854(), source.crystal_bandwidth_ghz)
                       / equivalent_noise_bandwidth_mhz(stage_etalon, stage_etalon.fsr_ghz))
        splitter = ChainElement(name="50:50 fiber splitter pass", survival=0.5, kind="splitter")
        chain_a = (
            ChainElement(name="fiber-fiber couplings", survival=0.76, kind="fiber"),
            splitter,
            link_854,
            _converter_element(conv_d, 0.60, "conversion (outbound)", 0.0),
            telecom_20km,
            ChainElement(name="retroreflector", survival=0.87, kind="generic"),
            replace(telecom_20km, name="20 km telecom fiber (return)"),
            _converter_element(conv_d, 0.60, "back-conversion (return)",
                               noise_1550 * passthrough),
            replace(link_854, name="fiber from converter lab (854 nm)"),
            replace(splitter, name="50:50 fiber splitter reflection"),
        )

    chain_b: tuple = ()
    path_a = chain_survival(chain_a)

    if which == "a":
        # symmetric split of the lumped detection efficiency between the arms
        capture = 1.0 - math.exp(-RATE_CALIBRATION_WINDOW_TAU / 2.0)
        rate_per_eta2 = (source.pair_rate_per_mw * RATE_CALIBRATION_POWER_MW * capture
                         * source.out_eff_a * source.out_eff_b)
        det_b_eff = math.sqrt(MEASURED_RATES_20MW["a"] / rate_per_eta2)
    else:
        det_b_eff = _build_arm_b_reference(source)
    det_a_eff = _solve_arm_a_detector(MEASURED_RATES_20MW[which], source,
                                      path_a, 1.0, det_b_eff)

    det_a_kind = "SNSPD" if which in ("b", "c") else "APD"
    detector_a = DetectorParams(efficiency=det_a_eff,
                                dark_rate=1.0 if det_a_kind == "SNSPD" else 10.0,
                                kind=det_a_kind)
    detector_b = DetectorParams(efficiency=det_b_eff, dark_rate=10.0, kind="APD")

    return ExperimentConfig(
        name=which,
        source=source,
        arm_a=ArmConfig(label="A", chain=chain_a, detector=detector_a),
        arm_b=ArmConfig(label="B", chain=chain_b, detector=detector_b),
        calibration_interval_min=None if which in ("a", "b") else 60.0,
        **overrides,
    )


def _build_arm_b_reference(source: src.SourceParams) -> float:
    """Arm-B detector efficiency shared by all configs (solved from setup a)."""
    capture = 1.0 - math.exp(-RATE_CALIBRATION_WINDOW_TAU / 2.0)
    rate_per_eta2 = (source.pair_rate_per_mw * RATE_CALIBRATION_POWER_MW * capture
                     * source.out_eff_a * source.out_eff_b)
    return math.sqrt(MEASURED_RATES_20MW["a"] / rate_per_eta2)
