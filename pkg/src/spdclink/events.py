"""Monte-Carlo time-tag generation and coincidence evaluation.

simulate_run draws pair emissions as a Poisson process, assigns joint
polarization outcomes by the Born rule of the chain-transformed state under
the (calibration-rotated) projectors, spreads the signal-idler delay with
the two-sided exponential wavepacket, applies survival coins per arm and
adds dark counts and converter noise as independent Poisson processes.
Runs are bit-for-bit reproducible for a fixed seed.

Times are integer picoseconds internally; public interfaces use ns. For
high-statistics runs the chunked generator keeps memory flat; pairs are
chunked by emission time, so true coincidences never straddle a boundary
and only a < 1e-6 fraction of accidentals at boundaries is lost for
chunk lengths of a second or more.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import link as lnk
from . import polarization as pol
from . import source as src
from .tomography import CountsTable, setting_projectors

PS_PER_NS = 1000
PS_PER_S = 1_000_000_000_000

ORIGIN_PAIR, ORIGIN_DARK, ORIGIN_NOISE = 0, 1, 2
_ORIGIN_NAMES = {ORIGIN_PAIR: "pair", ORIGIN_DARK: "dark", ORIGIN_NOISE: "converter_noise"}


@dataclass
class TimeTagStream:
    """Sorted detection times of one detector."""

    detector: str
    times_ps: np.ndarray
    duration_s: float
    origins: np.ndarray | None = None

    def __post_init__(self):
        self.times_ps = np.asarray(self.times_ps, dtype=np.int64)
        if self.times_ps.size and np.any(np.diff(self.times_ps) < 0):
            raise ValueError("time tags must be sorted ascending")

    def __len__(self):
        return self.times_ps.size

    def rate(self) -> float:
        return self.times_ps.size / self.duration_s

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ps", "detector"])
            for t in self.times_ps:
                w.writerow([int(t), self.detector])

    @classmethod
    def from_csv(cls, path, duration_s: float) -> "TimeTagStream":
        times, det = [], None
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                times.append(int(row[0]))
                det = row[1]
        return cls(detector=det or "?", times_ps=np.array(times, dtype=np.int64),
                   duration_s=duration_s)


@dataclass(frozen=True)
class WindowSpec:
    """Symmetric signal window and the delayed window used for background."""

    width_ns: float
    background_offset_ns: float = 200.0

    def __post_init__(self):
        if self.width_ns <= 0:
            raise ValueError("window width must be positive")
        if self.background_offset_ns < 150.0:
            raise ValueError("background offset must be at least 150 ns")


@dataclass
class CoincidenceHistogram:
    bin_width_ns: float
    range_ns: float
    counts: np.ndarray

    @property
    def bin_centers_ns(self) -> np.ndarray:
        n = self.counts.size
        return (np.arange(n) + 0.5) * self.bin_width_ns - self.range_ns


# ---------------------------------------------------------------------------
# Born-rule tables for one projection setting

class _SettingModel:
    """Joint outcome probabilities and delay-sign branch weights."""

    def __init__(self, config: lnk.ExperimentConfig, setting,
                 m_a: np.ndarray | None, m_b: np.ndarray | None):
        s = config.source
        psi = pol.bell_state(s.phase_rad, s.c1, s.c2)
        chan_a = config.arm_a.polarization_channel()
        chan_b = config.arm_b.polarization_channel()
        rho_out = lnk.apply_pair_channels(pol.density(psi), chan_a, chan_b)

        c1n = s.c1 / math.hypot(s.c1, s.c2)
        c2n = s.c2 / math.hypot(s.c1, s.c2)

        if setting is None:
            self.outcome_probs = np.array([1.0, 0.0, 0.0, 0.0])
            self.branch_hv_weight = np.array([c1n ** 2, 0.5, 0.5, 0.5])
            self.pass_a = 1.0
            self.pass_b = 1.0
            self.polarized = False
            return
        self.polarized = True

        label_a, label_b = setting
        ma = np.eye(2, dtype=complex) if m_a is None else pol.validate_unitary(m_a)
        mb = np.eye(2, dtype=complex) if m_b is None else pol.validate_unitary(m_b)
        # M is the forward arm rotation; the lab projects onto M|b>
        proj_a = ma @ pol.projector1(label_a) @ ma.conj().T
        proj_b = mb @ pol.projector1(label_b) @ mb.conj().T

        eye = np.eye(2)
        p_pp = pol.expectation(rho_out, np.kron(proj_a, proj_b))
        p_a = pol.expectation(rho_out, np.kron(proj_a, eye))
        p_b = pol.expectation(rho_out, np.kron(eye, proj_b))
        probs = np.array([p_pp, p_a - p_pp, p_b - p_pp, 1.0 - p_a - p_b + p_pp])
        self.outcome_probs = np.clip(probs, 0.0, None)
        self.outcome_probs /= self.outcome_probs.sum()
        self.pass_a = p_a
        self.pass_b = p_b

        # source-frame kets the measurement projects onto; the H-origin photon
        # carries the tau_H wavepacket, so the delay sign follows the branch
        ket_a = chan_a.unitary.conj().T @ ma @ pol.ket(label_a)
        ket_b = chan_b.unitary.conj().T @ mb @ pol.ket(label_b)
        kets_a = (ket_a, _orthogonal_ket(ket_a))
        kets_b = (ket_b, _orthogonal_ket(ket_b))
        phase = np.exp(1j * s.phase_rad)
        weights = np.empty(4)
        for o, (ia, ib) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            amp_hv = c1n * np.conj(kets_a[ia][0]) * np.conj(kets_b[ib][1])
            amp_vh = -c2n * phase * np.conj(kets_a[ia][1]) * np.conj(kets_b[ib][0])
            denom = abs(amp_hv) ** 2 + abs(amp_vh) ** 2
            weights[o] = abs(amp_hv) ** 2 / denom if denom > 1e-30 else 0.5
        self.branch_hv_weight = weights


def _orthogonal_ket(v: np.ndarray) -> np.ndarray:
    return np.array([-np.conj(v[1]), np.conj(v[0])])


def _detected_noise_rate(arm: lnk.ArmConfig, polarized: bool) -> float:
    """Converter noise rate at the detector: downstream losses and the
    projection polarizer (noise is unpolarized) apply."""
    rate = 0.0
    downstream = 1.0
    for el in reversed(arm.chain):
        rate += el.noise_rate * downstream
        downstream *= el.survival
    rate *= arm.detector.efficiency
    if polarized:
        rate *= 0.5
    return rate


def arm_singles_rate(config: lnk.ExperimentConfig, which: str, setting=None,
                     m_a=None, m_b=None) -> float:
    """Expected detected singles rate of one arm (1/s)."""
    model = _SettingModel(config, setting, m_a, m_b)
    p_pass = model.pass_a if which == "a" else model.pass_b
    arm = config.arm(which)
    return (config.source.pair_rate * config.arm_efficiency(which) * p_pass
            + arm.detector.dark_rate
            + _detected_noise_rate(arm, model.polarized))


# ---------------------------------------------------------------------------
# event generation

def _draw_pair_chunk(rng, config, model, t0_s, t1_s, power_source):
    """One chunk of detected pair tags for both arms (times in ps, unsorted)."""
    span = t1_s - t0_s
    n = rng.poisson(power_source.pair_rate * span)
    t_emit = (t0_s + span * rng.random(n)) * PS_PER_S

    outcome = rng.choice(4, size=n, p=model.outcome_probs)
    is_hv = rng.random(n) < model.branch_hv_weight[outcome]

    th, tv = power_source.tau_h_ns, power_source.tau_v_ns
    positive = rng.random(n) < th / (th + tv)
    mag = np.where(positive, rng.exponential(th, n), rng.exponential(tv, n))
    delay_hv_ns = np.where(positive, mag, -mag)
    delay_arm_ns = np.where(is_hv, delay_hv_ns, -delay_hv_ns)

    t_a = (t_emit + np.maximum(delay_arm_ns, 0.0) * PS_PER_NS).astype(np.int64)
    t_b = (t_emit + np.maximum(-delay_arm_ns, 0.0) * PS_PER_NS).astype(np.int64)

    pass_a = (outcome == 0) | (outcome == 1)
    pass_b = (outcome == 0) | (outcome == 2)
    det_a = pass_a & (rng.random(n) < config.arm_efficiency("a"))
    det_b = pass_b & (rng.random(n) < config.arm_efficiency("b"))
    return t_a[det_a], t_b[det_b]


def _draw_uniform_chunk(rng, rate, t0_s, t1_s):
    n = rng.poisson(rate * (t1_s - t0_s))
    return ((t0_s + (t1_s - t0_s) * rng.random(n)) * PS_PER_S).astype(np.int64)


def simulate_chunks(config: lnk.ExperimentConfig, setting, duration_s: float, seed: int,
                    chunk_s: float = 2.0, m_a=None, m_b=None, power_mw: float | None = None,
                    with_origins: bool = False):
    """Yield per-chunk sorted tag arrays (times_a, times_b) or, with origins,
    ((times_a, orig_a), (times_b, orig_b))."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    cfg = config if power_mw is None else config.at_power(power_mw)
    model = _SettingModel(cfg, setting, m_a, m_b)
    rng = np.random.default_rng(seed)
    noise_a = _detected_noise_rate(cfg.arm_a, model.polarized)
    noise_b = _detected_noise_rate(cfg.arm_b, model.polarized)

    t0 = 0.0
    while t0 < duration_s:
        t1 = min(t0 + chunk_s, duration_s)
        pa, pb = _draw_pair_chunk(rng, cfg, model, t0, t1, cfg.source)
        da = _draw_uniform_chunk(rng, cfg.arm_a.detector.dark_rate, t0, t1)
        db = _draw_uniform_chunk(rng, cfg.arm_b.detector.dark_rate, t0, t1)
        na = _draw_uniform_chunk(rng, noise_a, t0, t1)
        nb = _draw_uniform_chunk(rng, noise_b, t0, t1)

        if with_origins:
            yield (_merge_with_origins(pa, da, na), _merge_with_origins(pb, db, nb))
        else:
            ta = np.sort(np.concatenate([pa, da, na]))
            tb = np.sort(np.concatenate([pb, db, nb]))
            yield ta, tb
        t0 = t1


def _merge_with_origins(pair_t, dark_t, noise_t):
    times = np.concatenate([pair_t, dark_t, noise_t])
    origins = np.concatenate([
        np.full(pair_t.size, ORIGIN_PAIR, dtype=np.uint8),
        np.full(dark_t.size, ORIGIN_DARK, dtype=np.uint8),
        np.full(noise_t.size, ORIGIN_NOISE, dtype=np.uint8),
    ])
    order = np.argsort(times, kind="stable")
    return times[order], origins[order]


def simulate_run(config: lnk.ExperimentConfig, setting, duration_s: float, seed: int,
                 m_a=None, m_b=None, power_mw: float | None = None):
    """Simulate one acquisition; returns the two arms' TimeTagStreams.

    setting is a (basis_A, basis_B) pair, or None for polarization-
    indiscriminate detection (no projectors in either arm).
    """
    parts_a, parts_b = [], []
    for (ta, oa), (tb, ob) in simulate_chunks(config, setting, duration_s, seed,
                                              chunk_s=duration_s, m_a=m_a, m_b=m_b,
                                              power_mw=power_mw, with_origins=True):
        parts_a.append((ta, oa))
        parts_b.append((tb, ob))
    ta = np.concatenate([p[0] for p in parts_a])
    oa = np.concatenate([p[1] for p in parts_a])
    tb = np.concatenate([p[0] for p in parts_b])
    ob = np.concatenate([p[1] for p in parts_b])
    return (TimeTagStream("A", ta, duration_s, origins=oa),
            TimeTagStream("B", tb, duration_s, origins=ob))


# ---------------------------------------------------------------------------
# coincidence evaluation

def _require_sorted(arr: np.ndarray, name: str):
    if arr.size and np.any(np.diff(arr) < 0):
        raise ValueError(f"{name} tags must be sorted ascending")


def _times(stream) -> np.ndarray:
    return stream.times_ps if isinstance(stream, TimeTagStream) else np.asarray(stream, dtype=np.int64)


def _window_pair_count(a: np.ndarray, b: np.ndarray, lo_ps: int, hi_ps: int) -> int:
    """Number of (a, b) pairs with delay b - a in [lo_ps, hi_ps)."""
    if a.size == 0 or b.size == 0:
        return 0
    i0 = np.searchsorted(b, a + lo_ps, side="left")
    i1 = np.searchsorted(b, a + hi_ps, side="left")
    return int((i1 - i0).sum())


def _pair_deltas_ps(a: np.ndarray, b: np.ndarray, lo_ps: int, hi_ps: int) -> np.ndarray:
    """All delays b - a within [lo_ps, hi_ps), enumerated."""
    if a.size == 0 or b.size == 0:
        return np.empty(0, dtype=np.int64)
    i0 = np.searchsorted(b, a + lo_ps, side="left")
    i1 = np.searchsorted(b, a + hi_ps, side="left")
    counts = i1 - i0
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep_a = np.repeat(a, counts)
    starts = np.repeat(i0, counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return b[starts + offsets] - rep_a


def histogram(stream_a, stream_b, bin_ns: float = 1.0, range_ns: float = 100.0) -> CoincidenceHistogram:
    """Coincidence histogram of delays t_b - t_a over [-range, +range)."""
    a, b = _times(stream_a), _times(stream_b)
    _require_sorted(a, "stream A")
    _require_sorted(b, "stream B")
    range_ps = int(round(range_ns * PS_PER_NS))
    deltas = _pair_deltas_ps(a, b, -range_ps, range_ps)
    n_bins = int(round(2 * range_ns / bin_ns))
    edges = np.linspace(-range_ps, range_ps, n_bins + 1)
    counts, _ = np.histogram(deltas, bins=edges)
    return CoincidenceHistogram(bin_width_ns=bin_ns, range_ns=range_ns, counts=counts)


def counts_in_window(stream_a, stream_b, window: WindowSpec):
    """(signal, background) pair counts: delays within +-width/2 of zero and
    of the background offset. All pairs are counted, not just the first."""
    a, b = _times(stream_a), _times(stream_b)
    _require_sorted(a, "stream A")
    _require_sorted(b, "stream B")
    half = int(round(window.width_ns * PS_PER_NS / 2))
    off = int(round(window.background_offset_ns * PS_PER_NS))
    signal = _window_pair_count(a, b, -half, half)
    background = _window_pair_count(a, b, off - half, off + half)
    return signal, background


def estimate_signal_background(stream_a, stream_b, window: WindowSpec):
    """Background-corrected signal estimate and background estimate."""
    sig, bg = counts_in_window(stream_a, stream_b, window)
    return sig - bg, bg


def estimate_sbr(stream_a, stream_b, window: WindowSpec) -> float:
    s_est, b_est = estimate_signal_background(stream_a, stream_b, window)
    if b_est == 0:
        return math.inf
    return s_est / b_est


def windowed_counts_chunked(config: lnk.ExperimentConfig, setting, duration_s: float,
                            seed: int, window: WindowSpec, chunk_s: float = 2.0,
                            m_a=None, m_b=None, power_mw: float | None = None):
    """(signal, background) window counts for long runs with flat memory."""
    half = int(round(window.width_ns * PS_PER_NS / 2))
    off = int(round(window.background_offset_ns * PS_PER_NS))
    signal = background = 0
    for ta, tb in simulate_chunks(config, setting, duration_s, seed, chunk_s=chunk_s,
                                  m_a=m_a, m_b=m_b, power_mw=power_mw):
        signal += _window_pair_count(ta, tb, -half, half)
        background += _window_pair_count(ta, tb, off - half, off + half)
    return signal, background


# ---------------------------------------------------------------------------
# counts tables

def expected_window_counts(config: lnk.ExperimentConfig, setting, duration_s: float,
                           window: WindowSpec, m_a=None, m_b=None,
                           power_mw: float | None = None):
    """Exact expected (signal-window, background-window) counts for a setting."""
    cfg = config if power_mw is None else config.at_power(power_mw)
    model = _SettingModel(cfg, setting, m_a, m_b)
    capture = src.wavepacket_capture(window.width_ns, cfg.source)
    p_joint = model.outcome_probs[0]
    true_pairs = (cfg.source.pair_rate * cfg.arm_efficiency("a") * cfg.arm_efficiency("b")
                  * p_joint * capture * duration_s)
    r_a = arm_singles_rate(cfg, "a", setting, m_a, m_b)
    r_b = arm_singles_rate(cfg, "b", setting, m_a, m_b)
    accidental = r_a * r_b * (window.width_ns * 1e-9) * duration_s
    return true_pairs + accidental, accidental


def counts_table(config: lnk.ExperimentConfig, duration_s: float, seed: int,
                 window: WindowSpec, exact: bool = False, m_a=None, m_b=None,
                 power_mw: float | None = None, settings=None) -> CountsTable:
    """In-window coincidences for every tomography setting.

    exact=True replaces sampling with the expected counts (float), which is
    deterministic and fast; the background column carries the delayed-window
    counts either way.
    """
    settings = tuple(settings if settings is not None else config.settings)
    counts, background = [], []
    if exact:
        for setting in settings:
            s, b = expected_window_counts(config, setting, duration_s, window,
                                          m_a=m_a, m_b=m_b, power_mw=power_mw)
            counts.append(s)
            background.append(b)
    else:
        children = np.random.SeedSequence(seed).spawn(len(settings))
        for setting, child in zip(settings, children):
            sub_seed = int(child.generate_state(1)[0])
            s, b = windowed_counts_chunked(config, setting, duration_s, sub_seed,
                                           window, m_a=m_a, m_b=m_b, power_mw=power_mw)
            counts.append(float(s))
            background.append(float(b))
    return CountsTable(settings=settings, counts=tuple(counts),
                       background=tuple(background), duration_s=duration_s)


def single_qubit_counts(channel: lnk.PolarizationChannel, input_label: str, shots: float,
                        seed: int | None, settings=None) -> CountsTable:
    """Counts of a single-qubit tomography of a channel output.

    shots is the expected count per measurement setting; seed None returns
    the exact expectations instead of Poisson samples.
    """
    settings = tuple(settings if settings is not None else pol.BASIS_LABELS)
    rho_out = channel.apply(pol.projector1(input_label))
    probs = np.array([pol.expectation(rho_out, p) for p in setting_projectors(settings)])
    if seed is None:
        counts = shots * probs
    else:
        rng = np.random.default_rng(seed)
        counts = rng.poisson(shots * probs).astype(float)
    return CountsTable(settings=settings, counts=tuple(counts))
