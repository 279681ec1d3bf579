"""Reproduction harness: calibration, grid runs, reports and figure data.

run_scenario executes the full pipeline for every (pump power, window)
grid point of a configuration: simulate (or evaluate exactly), calibrate
the polarization rotations, reconstruct the state, attach Monte-Carlo
error bars and tabulate fidelity, purity, SBR and rates. Figure emitters
write the plot data as CSV; plotting itself is out of scope.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import curve_fit

from . import events as ev
from . import link as lnk
from . import polarization as pol
from . import source as src
from . import tomography as tomo

BELL_TARGET = pol.bell_state(math.radians(270.0))


def calibrate_arm(config: lnk.ExperimentConfig, which: str, shots: float | None = None,
                  seed: int = 0) -> np.ndarray:
    """Measure an arm's rotation matrix from deterministic H and R inputs.

    shots None runs on exact single-qubit outputs; otherwise the two
    tomographies are Poisson-sampled at the given per-setting shots.
    """
    channel = config.arm(which).polarization_channel()
    if shots is None:
        rho_h = channel.apply(pol.projector1("H"))
        rho_r = channel.apply(pol.projector1("R"))
        return tomo.calibrate_rotation(rho_h, rho_r)
    seeds = np.random.SeedSequence(seed).spawn(2)
    tables = [ev.single_qubit_counts(channel, label, shots, int(s.generate_state(1)[0]))
              for label, s in zip(("H", "R"), seeds)]
    rho_h = tomo.mle_reconstruct(tables[0]).rho
    rho_r = tomo.mle_reconstruct(tables[1]).rho
    return tomo.calibrate_rotation(rho_h, rho_r)


@dataclass
class PointResult:
    """One grid point of a scenario run."""

    config_name: str
    pump_power_mw: float
    window_tau: float
    window_ns: float
    fidelity: float
    fidelity_sigma: float
    fidelity_bg_corrected: float
    purity: float
    purity_sigma: float
    sbr: float
    sbr_sigma: float
    rate_hz: float
    ceiling: float
    provenance: str
    rho: np.ndarray
    rho_path: str | None = None


@dataclass
class RunReport:
    config_name: str
    seed: int
    points: list

    COLUMNS = ("config", "pump_power_mw", "window_tau", "window_ns", "fidelity",
               "fidelity_sigma", "fidelity_bg_corrected", "purity", "purity_sigma",
               "sbr", "sbr_sigma", "rate_hz", "fidelity_ceiling", "provenance",
               "rho_path")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for p in self.points:
                w.writerow([p.config_name, p.pump_power_mw, p.window_tau,
                            f"{p.window_ns:.6g}", f"{p.fidelity:.6f}",
                            f"{p.fidelity_sigma:.6f}", f"{p.fidelity_bg_corrected:.6f}",
                            f"{p.purity:.6f}", f"{p.purity_sigma:.6f}",
                            f"{p.sbr:.4f}", f"{p.sbr_sigma:.4f}", f"{p.rate_hz:.4f}",
                            f"{p.ceiling:.6f}", p.provenance, p.rho_path or ""])


def run_point(config: lnk.ExperimentConfig, pump_power_mw: float, window_tau: float,
              duration_s: float, seed: int, exact: bool = True,
              with_errors: bool = True, calibration_shots: float | None = None) -> PointResult:
    """Full pipeline for one (power, window) point of a configuration."""
    cfg = config.at_power(pump_power_mw)
    window = ev.WindowSpec(width_ns=cfg.window_ns(window_tau))

    m_a = calibrate_arm(cfg, "a", shots=calibration_shots, seed=seed + 11)
    m_b = calibrate_arm(cfg, "b", shots=calibration_shots, seed=seed + 13)

    table = ev.counts_table(cfg, duration_s, seed, window, exact=exact, m_a=m_a, m_b=m_b)
    projectors = tomo.setting_projectors(table.settings, m_a=m_a, m_b=m_b)

    result = tomo.mle_reconstruct(table, projectors=projectors)
    fidelity, purity = tomo.fidelity_and_purity(result, BELL_TARGET)

    result_bc = tomo.mle_reconstruct(table.background_corrected(), projectors=projectors)
    fidelity_bc, _ = tomo.fidelity_and_purity(result_bc, BELL_TARGET)

    if exact:
        s_counts, b_counts = ev.expected_window_counts(cfg, None, duration_s, window)
        s_est, b_est = s_counts - b_counts, b_counts
    else:
        sig, bg = ev.windowed_counts_chunked(cfg, None, duration_s, seed + 17, window)
        s_est, b_est = float(sig - bg), float(bg)
    sbr = s_est / b_est if b_est > 0 else math.inf
    sbr_sigma = (sbr * math.sqrt(1.0 / max(s_est, 1.0) + 1.0 / max(b_est, 1.0))
                 if math.isfinite(sbr) else 0.0)
    rate = s_est / duration_s

    if with_errors and not exact:
        err = tomo.monte_carlo_errors(table, n=max(100, cfg.mc_resamples), seed=seed + 19,
                                      target=BELL_TARGET, projectors=projectors)
        f_sigma, p_sigma = err.fidelity_sigma, err.purity_sigma
    else:
        f_sigma = p_sigma = 0.0

    return PointResult(
        config_name=cfg.name, pump_power_mw=pump_power_mw, window_tau=window_tau,
        window_ns=window.width_ns, fidelity=fidelity, fidelity_sigma=f_sigma,
        fidelity_bg_corrected=fidelity_bc, purity=purity, purity_sigma=p_sigma,
        sbr=sbr, sbr_sigma=sbr_sigma, rate_hz=rate,
        ceiling=src.fidelity_ceiling(src.analytic_sbr(window.width_ns, cfg.source)),
        provenance="exact" if exact else "sampled", rho=result.rho)


def run_scenario(config: lnk.ExperimentConfig, out_dir: str | None = None,
                 exact: bool = True, seed: int | None = None,
                 duration_s: float | None = None, with_errors: bool = True,
                 calibration_shots: float | None = None) -> RunReport:
    """Run the whole (power x window) grid of a configuration.

    Grid-point seeds derive deterministically from the master seed, so a
    report is reproducible bit for bit. Writes the report CSV plus one
    density-matrix JSON per grid point when out_dir is given.
    """
    seed = config.seed if seed is None else seed
    duration_s = config.duration_s if duration_s is None else duration_s
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    points = []
    for i, power in enumerate(config.pump_powers_mw):
        for j, wt in enumerate(config.window_tau_multiples):
            point_seed = seed + 1000 * i + 100 * j
            point = run_point(config, power, wt, duration_s, point_seed, exact=exact,
                              with_errors=with_errors, calibration_shots=calibration_shots)
            if out_dir:
                name = f"rho_{config.name}_{power:g}mW_{wt:g}tau.json"
                path = os.path.join(out_dir, name)
                with open(path, "w") as fh:
                    fh.write(pol.rho_to_json(point.rho))
                point.rho_path = path
            points.append(point)

    report = RunReport(config_name=config.name, seed=seed, points=points)
    if out_dir:
        report.to_csv(os.path.join(out_dir, f"report_{config.name}.csv"))
    return report


# ---------------------------------------------------------------------------
# wavepacket histogram and fit

def wavepacket_histogram(config: lnk.ExperimentConfig, duration_s: float, seed: int,
                         bin_ns: float = 1.0, range_ns: float = 100.0,
                         power_mw: float | None = None) -> ev.CoincidenceHistogram:
    """Polarization-resolved wavepacket histogram in the H-late convention.

    Sums the four H/V settings, mirroring the (V,H) delays so the positive
    side always carries the H photon's decay.
    """
    seeds = np.random.SeedSequence(seed).spawn(4)
    total = None
    for setting, child in zip((("H", "V"), ("V", "H"), ("H", "H"), ("V", "V")), seeds):
        a, b = ev.simulate_run(config, setting, duration_s,
                               int(child.generate_state(1)[0]), power_mw=power_mw)
        hist = ev.histogram(a, b, bin_ns=bin_ns, range_ns=range_ns)
        counts = hist.counts if setting != ("V", "H") else hist.counts[::-1]
        total = counts if total is None else total + counts
    return ev.CoincidenceHistogram(bin_width_ns=bin_ns, range_ns=range_ns, counts=total)


def fit_wavepacket(hist: ev.CoincidenceHistogram):
    """Fit A * two-sided-exponential + floor; returns (tau_pos, tau_neg, A, floor).

    tau_pos is the decay constant of the positive-delay side (the H photon
    in the convention of wavepacket_histogram).
    """
    t = hist.bin_centers_ns
    y = hist.counts.astype(float)

    def model(delay, amp, tau_p, tau_n, floor):
        return amp * np.where(delay >= 0, np.exp(-delay / tau_p),
                              np.exp(delay / tau_n)) + floor

    p0 = (float(y.max()), 15.0, 13.0, float(np.median(y[:10])))
    popt, _ = curve_fit(model, t, y, p0=p0, maxfev=20000)
    return popt[1], popt[2], popt[0], popt[3]


# ---------------------------------------------------------------------------
# figure data

FIGURE_KINDS = ("wavepacket", "sbr_vs_window", "efficiency_vs_pump",
                "fidelity_sbr_grid", "cluster", "rates")


def emit_figure_data(which: str, out_dir: str, config: lnk.ExperimentConfig | None = None,
                     report: RunReport | None = None, reports=None,
                     duration_s: float = 2.0, seed: int = 20, exact: bool = True) -> str:
    """Write one figure's plot data as CSV and return its path."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{which}.csv")

    if which == "wavepacket":
        cfg = config if config is not None else lnk.build_config("a")
        hist = wavepacket_histogram(cfg, duration_s, seed)
        tau_p, tau_n, _, _ = fit_wavepacket(hist)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay_ns", "counts", "provenance"])
            for t, c in zip(hist.bin_centers_ns, hist.counts):
                w.writerow([f"{t:.3f}", int(c), "sampled"])
        with open(os.path.join(out_dir, "wavepacket_fit.json"), "w") as fh:
            json.dump({"tau_pos_ns": tau_p, "tau_neg_ns": tau_n}, fh)
        return path

    if which == "sbr_vs_window":
        cfg = config if config is not None else lnk.build_config("a")
        rows = []
        for mult in np.linspace(0.5, 6.0, 12):
            window = ev.WindowSpec(width_ns=cfg.window_ns(mult))
            if exact:
                s, b = ev.expected_window_counts(cfg, None, duration_s, window)
                s_est, b_est = s - b, b
                prov = "exact"
            else:
                sig, bg = ev.windowed_counts_chunked(cfg, None, duration_s, seed, window)
                s_est, b_est = sig - bg, bg
                prov = "sampled"
            rows.append((window.width_ns, s_est / b_est if b_est else math.inf,
                         src.analytic_sbr(window.width_ns, cfg.source),
                         s_est / duration_s, prov))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_ns", "sbr", "sbr_analytic", "rate_hz", "provenance"])
            for r in rows:
                w.writerow([f"{r[0]:.4f}", f"{r[1]:.4f}", f"{r[2]:.4f}",
                            f"{r[3]:.4f}", r[4]])
        return path

    if which == "efficiency_vs_pump":
        conv = lnk.ConverterParams()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["pump_w", "eta_h", "eta_v", "provenance"])
            for p in np.linspace(0.0, 0.9, 46):
                w.writerow([f"{p:.3f}", f"{lnk.conversion_efficiency(p, conv, 'H'):.6f}",
                            f"{lnk.conversion_efficiency(p, conv, 'V'):.6f}", "analytic"])
        return path

    if which == "cluster":
        params = config.source if config is not None else src.SourceParams()
        spectrum = src.cluster_spectrum(params, n_modes=5)
        spectrum.to_csv(path)
        return path

    if which in ("fidelity_sbr_grid", "rates"):
        if reports is None:
            reports = [report] if report is not None else []
        if not reports:
            raise ValueError(f"figure {which!r} needs at least one run report")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if which == "rates":
                w.writerow(["config", "pump_power_mw", "rate_hz", "provenance"])
                for rep in reports:
                    for p in rep.points:
                        if p.window_tau == rep.points[0].window_tau:
                            w.writerow([p.config_name, p.pump_power_mw,
                                        f"{p.rate_hz:.4f}", p.provenance])
            else:
                w.writerow(["config", "pump_power_mw", "window_tau", "fidelity",
                            "fidelity_sigma", "fidelity_bg_corrected", "sbr",
                            "sbr_sigma", "fidelity_ceiling", "provenance"])
                for rep in reports:
                    for p in rep.points:
                        w.writerow([p.config_name, p.pump_power_mw, p.window_tau,
                                    f"{p.fidelity:.6f}", f"{p.fidelity_sigma:.6f}",
                                    f"{p.fidelity_bg_corrected:.6f}", f"{p.sbr:.4f}",
                                    f"{p.sbr_sigma:.4f}", f"{p.ceiling:.6f}",
                                    p.provenance])
        return path

    raise ValueError(f"unknown figure {which!r}, expected one of {FIGURE_KINDS}")
