"""Experiment config files: INI sections [run], [source], [arm_a], [arm_b],
[tomography].

[run] picks the base configuration (a-d) and the grid; the other sections
override source parameters and detector values of the built configuration.
Physical units are part of the key names. validate_config reports every
problem with its section and key.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import replace

from . import link as lnk
from . import source as src

_RUN_KEYS = {
    "configuration": str,
    "pump_powers_mw": "floats",
    "windows_tau": "floats",
    "duration_s": float,
    "seed": int,
    "exact": "bool",
    "calibration_interval_min": float,
}

_SOURCE_KEYS = {
    "pair_rate_per_mw": float,
    "pump_power_mw": float,
    "tau_h_ns": float,
    "tau_v_ns": float,
    "fsr_h_ghz": float,
    "fsr_v_ghz": float,
    "hv_mode_offset_mhz": float,
    "crystal_bandwidth_ghz": float,
    "phase_deg": float,
    "c1": float,
    "c2": float,
    "out_eff_a": float,
    "out_eff_b": float,
}

_ARM_KEYS = {
    "detector_efficiency": float,
    "detector_dark_rate_hz": float,
    "detector_kind": str,
}

_TOMOGRAPHY_KEYS = {
    "settings": int,
    "mc_resamples": int,
}

_SECTIONS = {
    "run": _RUN_KEYS,
    "source": _SOURCE_KEYS,
    "arm_a": _ARM_KEYS,
    "arm_b": _ARM_KEYS,
    "tomography": _TOMOGRAPHY_KEYS,
}


class ConfigError(ValueError):
    """Config file problem, with section/key diagnostics."""


def _parse_value(section: str, key: str, raw: str, kind):
    try:
        if kind == "floats":
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("not a boolean")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _collect(parser: configparser.ConfigParser) -> dict:
    values: dict = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] "
                              f"(expected one of {', '.join(_SECTIONS)})")
        schema = _SECTIONS[section]
        sec_values = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            sec_values[key] = _parse_value(section, key, raw, schema[key])
        values[section] = sec_values
    return values


def _arm_with_overrides(arm: lnk.ArmConfig, overrides: dict, section: str) -> lnk.ArmConfig:
    det = arm.detector
    kwargs = {}
    if "detector_efficiency" in overrides:
        kwargs["efficiency"] = overrides["detector_efficiency"]
    if "detector_dark_rate_hz" in overrides:
        kwargs["dark_rate"] = overrides["detector_dark_rate_hz"]
    if "detector_kind" in overrides:
        kind = overrides["detector_kind"]
        if kind not in ("APD", "SNSPD"):
            raise ConfigError(f"[{section}] detector_kind must be APD or SNSPD")
        kwargs["kind"] = kind
    if not kwargs:
        return arm
    return replace(arm, detector=replace(det, **kwargs))


def load_config(path: str) -> tuple[lnk.ExperimentConfig, dict]:
    """Build the ExperimentConfig and run options described by an INI file.

    Returns (config, run_options) where run_options holds duration_s, exact
    and seed resolved from the [run] section.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    values = _collect(parser)

    run = values.get("run", {})
    which = run.get("configuration", "a")
    if which not in lnk.MEASURED_RATES_20MW:
        raise ConfigError(f"[run] configuration must be one of a, b, c, d, got {which!r}")

    source_kwargs = dict(values.get("source", {}))
    if "phase_deg" in source_kwargs:
        source_kwargs["phase_rad"] = math.radians(source_kwargs.pop("phase_deg"))
    try:
        source = src.SourceParams(**source_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[source] {exc}") from None

    config_kwargs = {}
    if "pump_powers_mw" in run:
        config_kwargs["pump_powers_mw"] = run["pump_powers_mw"]
    if "windows_tau" in run:
        config_kwargs["window_tau_multiples"] = run["windows_tau"]
    if "duration_s" in run:
        config_kwargs["duration_s"] = run["duration_s"]
    if "seed" in run:
        config_kwargs["seed"] = run["seed"]
    if "calibration_interval_min" in run:
        config_kwargs["calibration_interval_min"] = run["calibration_interval_min"]
    tomo_sec = values.get("tomography", {})
    if "settings" in tomo_sec:
        n = tomo_sec["settings"]
        if n == 16:
            config_kwargs["settings"] = lnk.TOMOGRAPHY_SETTINGS_16
        elif n == 36:
            config_kwargs["settings"] = lnk.TOMOGRAPHY_SETTINGS_36
        else:
            raise ConfigError("[tomography] settings must be 16 or 36")
    if "mc_resamples" in tomo_sec:
        if tomo_sec["mc_resamples"] < 100:
            raise ConfigError("[tomography] mc_resamples must be >= 100")
        config_kwargs["mc_resamples"] = tomo_sec["mc_resamples"]

    config = lnk.build_config(which, source=source, **config_kwargs)
    config = replace(
        config,
        arm_a=_arm_with_overrides(config.arm_a, values.get("arm_a", {}), "arm_a"),
        arm_b=_arm_with_overrides(config.arm_b, values.get("arm_b", {}), "arm_b"),
    )

    options = {
        "duration_s": config.duration_s,
        "seed": config.seed,
        "exact": run.get("exact", False),
    }
    return config, options


def validate_config(path: str) -> list[str]:
    """Return a list of diagnostics; empty means the file is valid."""
    try:
        load_config(path)
    except (ConfigError, configparser.Error) as exc:
        return [str(exc)]
    return []


def sample_config_text(which: str = "a") -> str:
    """A documented sample config for the given base configuration."""
    return f"""# spdclink experiment configuration
[run]
configuration = {which}
pump_powers_mw = 5, 10, 15, 20
windows_tau = 1.5, 5
duration_s = 1.0
seed = 1234
exact = true

[source]
pump_power_mw = 20
phase_deg = 270

[tomography]
settings = 16
mc_resamples = 120
"""
