"""Synthetic daily RU traffic for business and residential cells.

The template is a raised-cosine bump of half-width 6 h on top of a flat
baseline.  The baseline is solved so the 24 h mean equals ``mean_mbps`` while
the value at ``peak_hour`` equals ``peak_mbps``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MINUTES_PER_DAY = 1440
BUMP_HALF_WIDTH_H = 6.0
# Mean of the raised-cosine bump over a 24 h day: (2 * half_width / 2) / 24.
_BUMP_MEAN = BUMP_HALF_WIDTH_H / 24.0

PEAK_HOURS = {"business": 8.0, "residential": 22.0}


@dataclass(frozen=True)
class TrafficProfile:
    kind: str = "business"
    peak_mbps: float = 200.0
    mean_mbps: float = 100.0
    peak_hour: float | None = None
    noise_rel_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in PEAK_HOURS:
            raise ConfigError(f"unknown traffic profile {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.peak_hour is None:
            object.__setattr__(self, "peak_hour", PEAK_HOURS[kind])
        if not 0 < self.mean_mbps <= self.peak_mbps:
            raise ConfigError("need 0 < mean_mbps <= peak_mbps")
        if not 0 <= self.peak_hour < 24:
            raise ConfigError("peak_hour must lie in [0, 24)")
        if self.noise_rel_std < 0:
            raise ConfigError("noise_rel_std must be nonnegative")

    @property
    def baseline_mbps(self) -> float:
        return (self.mean_mbps - self.peak_mbps * _BUMP_MEAN) / (1.0 - _BUMP_MEAN)


def _bump(profile: TrafficProfile, hours):
    dist = np.abs((np.asarray(hours, dtype=float) - profile.peak_hour + 12.0) % 24.0 - 12.0)
    return np.where(
        dist < BUMP_HALF_WIDTH_H,
        0.5 * (1.0 + np.cos(np.pi * dist / BUMP_HALF_WIDTH_H)),
        0.0,
    )


def pattern_value(profile: TrafficProfile, time_of_day: float) -> float:
    """Noiseless template load (Mbps) at ``time_of_day`` hours."""
    if not 0 <= time_of_day < 24:
        raise ValueError(f"time_of_day must lie in [0, 24), got {time_of_day}")
    base = profile.baseline_mbps
    value = base + (profile.peak_mbps - base) * float(_bump(profile, time_of_day))
    return max(value, 0.0)


def _check_step(step_minutes: int) -> int:
    if step_minutes <= 0 or MINUTES_PER_DAY % step_minutes:
        raise ValueError(f"step_minutes must divide {MINUTES_PER_DAY}, got {step_minutes}")
    return int(step_minutes)


def template_day(profile: TrafficProfile, step_minutes: int = 15) -> np.ndarray:
    step = _check_step(step_minutes)
    hours = np.arange(0, MINUTES_PER_DAY, step) / 60.0
    base = profile.baseline_mbps
    return np.maximum(base + (profile.peak_mbps - base) * _bump(profile, hours), 0.0)


def generate_day(profile: TrafficProfile, step_minutes: int = 15, seed: int | None = None) -> np.ndarray:
    """One day of RU load, one sample per step, with multiplicative Gaussian noise.

    ``seed`` overrides ``profile.seed`` so callers can draw many days from one
    profile.  Sample ``k`` covers minute ``k * step_minutes``.
    """
    values = template_day(profile, step_minutes)
    if profile.noise_rel_std == 0:
        return values
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    noise = 1.0 + rng.normal(0.0, profile.noise_rel_std, size=values.shape)
    return np.maximum(values * noise, 0.0)


def write_trace_csv(path, values, step_minutes: int = 15) -> None:
    step = _check_step(step_minutes)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute", "lambda_mbps"])
        for k, v in enumerate(values):
            w.writerow([k * step, repr(float(v))])


def read_trace_csv(path) -> tuple[np.ndarray, int]:
    """Load an external ``minute,lambda_mbps`` trace; returns (values, step_minutes)."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    except FileNotFoundError:
        raise ConfigError(f"trace file not found: {path}") from None
    if not rows or [c.strip() for c in rows[0]] != ["minute", "lambda_mbps"]:
        raise ConfigError(f"{path}: expected header 'minute,lambda_mbps'")
    try:
        minutes = [int(r[0]) for r in rows[1:]]
        values = np.array([float(r[1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: bad row ({exc})") from None
    if len(minutes) < 1 or minutes[0] != 0:
        raise ConfigError(f"{path}: trace must start at minute 0")
    step = minutes[1] - minutes[0] if len(minutes) > 1 else MINUTES_PER_DAY
    if step <= 0 or any(m != k * step for k, m in enumerate(minutes)):
        raise ConfigError(f"{path}: minutes must be evenly spaced from 0")
    if len(minutes) * step != MINUTES_PER_DAY:
        raise ConfigError(f"{path}: trace must cover exactly one day")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ConfigError(f"{path}: loads must be finite and nonnegative")
    return values, step
