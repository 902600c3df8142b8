"""Synthetic weather and scintillometer series with a diurnal turbulence cycle.

The measured record this pipeline was designed for is not public, so the
generator stands in for it.  log10 Cn2 follows a daily profile with a strong
afternoon peak, an evening minimum and a weaker overnight bump, plus
red noise.  Weather variables are driven by the same solar cycle so they
carry real (if simple) information about turbulence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from datetime import timezone
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .timeseries import format_timestamp, from_minutes, parse_timestamp, to_minutes


@dataclass(frozen=True)
class SynthConfig:
    start: str = "2023-07-01T00:00:00Z"
    days: int = 30
    log10_min: float = -16.0
    log10_max: float = -14.0
    noise_std: float = 0.08  # stationary std of the red noise, decades
    noise_corr_minutes: float = 90.0
    gap_fraction: float = 0.0
    weather_cadence: int = 60  # minutes between weather rows
    seed: int = 0

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("days must be at least 1")
        if not self.log10_min < self.log10_max:
            raise ValueError("log10_min must be below log10_max")
        if not 0 <= self.gap_fraction < 1:
            raise ValueError("gap_fraction must lie in [0, 1)")
        if self.weather_cadence < 1:
            raise ValueError("weather_cadence must be positive")


def _bump(hour, centre, width):
    d = (hour - centre + 12) % 24 - 12
    return np.exp(-0.5 * (d / width) ** 2)


def diurnal_shape(hour) -> np.ndarray:
    """Profile in [0, 1]: 1 at the afternoon peak, 0 at the evening minimum."""
    hour = np.asarray(hour, dtype=float)
    raw = _bump(hour, 14.0, 2.6) + 0.35 * _bump(hour, 2.5, 2.0) - 0.25 * _bump(hour, 20.0, 1.5)
    grid = np.linspace(0, 24, 24 * 60, endpoint=False)
    ref = _bump(grid, 14.0, 2.6) + 0.35 * _bump(grid, 2.5, 2.0) - 0.25 * _bump(grid, 20.0, 1.5)
    return (raw - ref.min()) / (ref.max() - ref.min())


def _red_noise(rng, n, std, corr):
    """Stationary AR(1) sequence with the given std and e-folding time."""
    phi = math.exp(-1.0 / corr)
    eps = rng.standard_normal(n) * std * math.sqrt(1 - phi * phi)
    start = rng.standard_normal() * std
    out, _ = lfilter([1.0], [1.0, -phi], eps, zi=[phi * start])
    return out


def _outage_mask(rng, n, fraction):
    """Boolean mask of missing minutes made of 30 to 240 minute outages."""
    mask = np.zeros(n, dtype=bool)
    target = int(round(fraction * n))
    while mask.sum() < target:
        length = int(rng.integers(30, 241))
        start = int(rng.integers(0, max(1, n - length)))
        mask[start:start + length] = True
    # trim the last outage so the fraction is met exactly
    extra = int(mask.sum()) - target
    if extra > 0:
        mask[np.flatnonzero(mask[start:start + length])[-extra:] + start] = False
    return mask


@dataclass
class SynthData:
    config: SynthConfig
    start_minute: int
    log10_cn2: np.ndarray  # per minute, NaN during outages
    weather: dict[str, np.ndarray]  # per weather row
    weather_minutes: np.ndarray

    def write_weather_csv(self, path: str | Path) -> None:
        cols = ["temperature_c", "solar_radiation_kj_m2", "relative_humidity_pct",
                "pressure_hpa", "wind_speed_m_s"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp_utc", *cols])
            for i, m in enumerate(self.weather_minutes):
                w.writerow([format_timestamp(from_minutes(int(m))),
                            *(f"{self.weather[c][i]:.3f}" for c in cols)])

    def write_scint_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp_utc", "cn2_m_minus_2_3"])
            for i, v in enumerate(self.log10_cn2):
                if not np.isnan(v):
                    w.writerow([format_timestamp(from_minutes(self.start_minute + i)), f"{10.0 ** v:.6e}"])

    def daily_extremes(self) -> np.ndarray:
        """(days, 2) array of per-day min and max log10 Cn2, ignoring outages."""
        days = self.log10_cn2.reshape(self.config.days, 1440)
        return np.stack([np.nanmin(days, axis=1), np.nanmax(days, axis=1)], axis=1)


def generate(config: SynthConfig | None = None) -> SynthData:
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    start = parse_timestamp(config.start)
    start = start.replace(hour=0, minute=0, tzinfo=start.tzinfo or timezone.utc)
    m0 = to_minutes(start)
    n = config.days * 1440
    minutes = np.arange(n)
    hour = (minutes % 1440) / 60.0
    shape = diurnal_shape(hour)
    lo, hi = config.log10_min, config.log10_max
    # the deterministic profile overshoots the band slightly so clipping pins
    # every day's extremes to the band edges
    margin = 0.15 * (hi - lo)
    noise = _red_noise(rng, n, config.noise_std, config.noise_corr_minutes)
    log_cn2 = np.clip(lo - margin + (hi - lo + 2 * margin) * shape + noise, lo, hi)
    log_cn2[_outage_mask(rng, n, config.gap_fraction)] = np.nan

    wm = np.arange(0, n, config.weather_cadence)
    wh = hour[wm]
    day = wm / 1440.0
    s = shape[wm]
    sun = np.clip(np.sin(np.pi * (wh - 6.0) / 12.0), 0, None)
    k = len(wm)
    weather = {
        "temperature_c": 18 + 2 * np.sin(2 * np.pi * day / 30) + 6 * np.cos(2 * np.pi * (wh - 15) / 24)
        + rng.normal(0, 0.5, k),
        "solar_radiation_kj_m2": np.clip(2800 * sun * (1 + rng.normal(0, 0.05, k)), 0, None),
        "relative_humidity_pct": np.clip(85 - 40 * s + rng.normal(0, 3, k), 0, 100),
        "pressure_hpa": 1013 + np.cumsum(rng.normal(0, 0.3, k)),
        "wind_speed_m_s": np.clip(2.5 + 1.5 * s + rng.normal(0, 0.6, k), 0, None),
    }
    return SynthData(config, m0, log_cn2, weather, m0 + wm)


def write_dataset(config: SynthConfig, weather_path, scint_path) -> SynthData:
    data = generate(config)
    data.write_weather_csv(weather_path)
    data.write_scint_csv(scint_path)
    return data


def config_dict(config: SynthConfig) -> dict:
    return asdict(config)

